"""Staggered (MAC) Cartesian grid, field containers and discrete operators.

Layout
------
* scalars live at cell centres, arrays of shape ``n_cells``;
* velocity component ``a`` lives on faces normal to axis ``a``: ``n_a + 1``
  faces along ``a`` for a walled axis, ``n_a`` for a periodic one;
* symmetric tensors keep their diagonal at cell centres and the ``(a, b)``
  off-diagonal entry on edges (face-type along ``a`` and ``b``).

A "stagger" is a tuple of booleans, one per axis, ``True`` meaning
face-type along that axis.  All operators are assembled once per grid as
sparse matrices acting on flattened (C-order) arrays, so every linear
operator used by the solver is exactly the one the tests exercise.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from itertools import combinations

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

__all__ = [
    "GridError",
    "PoissonError",
    "CFLError",
    "StaggeredGrid",
    "ScalarField",
    "VectorField",
    "SymTensorField",
    "WallSites",
    "PoissonInfo",
    "interpolate",
    "gradient",
    "divergence",
    "sym_gradient",
    "laplacian",
    "neumann_laplacian_solve",
    "advect_diffuse_step",
    "upwind_outflow_rate",
]

DEFAULT_MAX_CELLS = 4_000_000


class GridError(ValueError):
    pass


class PoissonError(RuntimeError):
    def __init__(self, message, residual):
        super().__init__(f"{message} (relative residual {residual:.3e})")
        self.residual = residual


class CFLError(RuntimeError):
    def __init__(self, cfl):
        super().__init__(f"CFL condition violated: outflow number {cfl:.4f} > 1")
        self.cfl = cfl


def tensor_components(dim):
    """Storage order of symmetric-tensor components: diagonal then upper pairs."""
    return [(a, a) for a in range(dim)] + list(combinations(range(dim), 2))


def component_stagger(dim, comp):
    a, b = comp
    if a == b:
        return (False,) * dim
    return tuple(k in (a, b) for k in range(dim))


@dataclass(frozen=True)
class WallSites:
    """Wall edges where a tangential velocity component meets a wall.

    One entry per (wall, tangential component, edge) excluding corners.
    ``row`` indexes the site in the tensor-site numbering, ``face`` the
    adjacent velocity unknown, ``face2`` the next one inward (used for linear
    extrapolation).  ``sign`` is +1 on low walls and -1 on high walls:
    the off-diagonal strain there is ``sign * (u_adj - v_wall) / h``.
    """

    row: np.ndarray
    face: np.ndarray
    face2: np.ndarray
    sign: np.ndarray
    h: np.ndarray
    axis: np.ndarray
    side: np.ndarray
    comp: np.ndarray
    plane_index: np.ndarray

    def __len__(self):
        return len(self.row)


@dataclass(frozen=True, eq=False)
class StaggeredGrid:
    """Axis-aligned box split into ``n_cells`` uniform cells.

    ``periodic`` flags axes that wrap around; every other axis is bounded by
    two impermeable walls.
    """

    n_cells: tuple
    spacing: tuple
    origin: tuple = None
    periodic: tuple = None
    max_cells: int = DEFAULT_MAX_CELLS

    def __post_init__(self):
        n = tuple(int(v) for v in self.n_cells)
        h = tuple(float(v) for v in self.spacing)
        if len(n) not in (2, 3):
            raise GridError(f"dimension must be 2 or 3, got {len(n)}")
        if len(h) != len(n):
            raise GridError("spacing must have one entry per axis")
        if any(v < 2 for v in n):
            raise GridError(f"need at least 2 cells per axis, got {n}")
        if not all(np.isfinite(v) and v > 0 for v in h):
            raise GridError(f"spacing must be positive, got {h}")
        if int(np.prod(n)) > self.max_cells:
            raise GridError(f"{int(np.prod(n))} cells exceed the configured maximum {self.max_cells}")
        origin = (0.0,) * len(n) if self.origin is None else tuple(float(v) for v in self.origin)
        periodic = (False,) * len(n) if self.periodic is None else tuple(bool(v) for v in self.periodic)
        if len(origin) != len(n) or len(periodic) != len(n):
            raise GridError("origin and periodic must have one entry per axis")
        object.__setattr__(self, "n_cells", n)
        object.__setattr__(self, "spacing", h)
        object.__setattr__(self, "origin", origin)
        object.__setattr__(self, "periodic", periodic)

    @classmethod
    def box(cls, n_cells, lengths, periodic=None, origin=None, max_cells=DEFAULT_MAX_CELLS):
        h = tuple(float(L) / int(n) for L, n in zip(lengths, n_cells))
        return cls(tuple(n_cells), h, origin=origin, periodic=periodic, max_cells=max_cells)

    def __eq__(self, other):
        if not isinstance(other, StaggeredGrid):
            return NotImplemented
        return (self.n_cells, self.spacing, self.origin, self.periodic) == (
            other.n_cells, other.spacing, other.origin, other.periodic)

    def __hash__(self):
        return hash((self.n_cells, self.spacing, self.origin, self.periodic))

    # ---- shapes and coordinates ---------------------------------------

    @property
    def dim(self):
        return len(self.n_cells)

    @property
    def lengths(self):
        return tuple(n * h for n, h in zip(self.n_cells, self.spacing))

    @property
    def cell_volume(self):
        return float(np.prod(self.spacing))

    @property
    def n_total(self):
        return int(np.prod(self.n_cells))

    def stagger_shape(self, stag):
        return tuple(
            n + (1 if (s and not per) else 0)
            for n, s, per in zip(self.n_cells, stag, self.periodic)
        )

    def face_stagger(self, a):
        return tuple(k == a for k in range(self.dim))

    def face_shape(self, a):
        return self.stagger_shape(self.face_stagger(a))

    def axis_coords(self, axis, face):
        n, h, x0 = self.n_cells[axis], self.spacing[axis], self.origin[axis]
        if face:
            m = n if self.periodic[axis] else n + 1
            return x0 + h * np.arange(m)
        return x0 + h * (np.arange(n) + 0.5)

    def coords(self, stag=None):
        """Coordinate arrays (``indexing='ij'``) of the sites of a stagger."""
        stag = (False,) * self.dim if stag is None else stag
        axes = [self.axis_coords(k, s) for k, s in enumerate(stag)]
        return np.meshgrid(*axes, indexing="ij")

    def cell_centers(self):
        return self.coords()

    def face_centers(self, a):
        return self.coords(self.face_stagger(a))

    # ---- velocity vector layout -----------------------------------------

    @cached_property
    def face_offsets(self):
        sizes = [int(np.prod(self.face_shape(a))) for a in range(self.dim)]
        return np.concatenate([[0], np.cumsum(sizes)]).astype(int)

    @property
    def n_faces(self):
        return int(self.face_offsets[-1])

    def face_index(self, a):
        lo, hi = self.face_offsets[a], self.face_offsets[a + 1]
        return np.arange(lo, hi).reshape(self.face_shape(a))

    @cached_property
    def active_faces(self):
        """Flat indices of faces carrying unknowns (every face but wall-normal ones)."""
        out = []
        for a in range(self.dim):
            idx = self.face_index(a)
            if not self.periodic[a]:
                idx = np.take(idx, np.arange(1, self.n_cells[a]), axis=a)
            out.append(idx.ravel())
        return np.sort(np.concatenate(out))

    @cached_property
    def face_mask(self):
        m = np.zeros(self.n_faces, dtype=bool)
        m[self.active_faces] = True
        return m

    # ---- tensor-site layout ---------------------------------------------

    @cached_property
    def tensor_components(self):
        return tensor_components(self.dim)

    @cached_property
    def site_offsets(self):
        sizes = [int(np.prod(self.stagger_shape(component_stagger(self.dim, c))))
                 for c in self.tensor_components]
        return np.concatenate([[0], np.cumsum(sizes)]).astype(int)

    @property
    def n_sites(self):
        return int(self.site_offsets[-1])

    def site_index(self, k):
        comp = self.tensor_components[k]
        shape = self.stagger_shape(component_stagger(self.dim, comp))
        return np.arange(self.site_offsets[k], self.site_offsets[k + 1]).reshape(shape)

    @cached_property
    def site_volume(self):
        """Dual-cell volume of every tensor site (halved per wall the site sits on)."""
        out = np.empty(self.n_sites)
        V = self.cell_volume
        for k, comp in enumerate(self.tensor_components):
            stag = component_stagger(self.dim, comp)
            vol = np.full(self.stagger_shape(stag), V)
            for ax, s in enumerate(stag):
                if s and not self.periodic[ax]:
                    sl = [slice(None)] * self.dim
                    for end in (0, -1):
                        sl[ax] = end
                        vol[tuple(sl)] *= 0.5
            out[self.site_index(k).ravel()] = vol.ravel()
        return out

    @cached_property
    def site_multiplicity(self):
        """1 for diagonal sites, 2 for off-diagonal ones (they appear twice in A:A)."""
        out = np.empty(self.n_sites)
        for k, (a, b) in enumerate(self.tensor_components):
            out[self.site_offsets[k]:self.site_offsets[k + 1]] = 1.0 if a == b else 2.0
        return out

    # ---- assembled operators --------------------------------------------

    @cached_property
    def gradient_matrix(self):
        """Cells -> faces; rows of wall-normal boundary faces are empty."""
        rows, cols, vals = [], [], []
        cells = np.arange(self.n_total).reshape(self.n_cells)
        for a in range(self.dim):
            h = self.spacing[a]
            f = self.face_index(a)
            if self.periodic[a]:
                faces, hi, lo = f, cells, np.roll(cells, 1, axis=a)
            else:
                n = self.n_cells[a]
                faces = np.take(f, np.arange(1, n), axis=a)
                hi = np.take(cells, np.arange(1, n), axis=a)
                lo = np.take(cells, np.arange(0, n - 1), axis=a)
            rows += [faces.ravel(), faces.ravel()]
            cols += [hi.ravel(), lo.ravel()]
            vals += [np.full(faces.size, 1.0 / h), np.full(faces.size, -1.0 / h)]
        return sp.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(self.n_faces, self.n_total))

    @cached_property
    def divergence_matrix(self):
        """Faces -> cells, flux difference over every cell (boundary faces included)."""
        rows, cols, vals = [], [], []
        cells = np.arange(self.n_total).reshape(self.n_cells)
        for a in range(self.dim):
            h = self.spacing[a]
            f = self.face_index(a)
            n = self.n_cells[a]
            if self.periodic[a]:
                hi, lo = np.roll(f, -1, axis=a), f
            else:
                hi = np.take(f, np.arange(1, n + 1), axis=a)
                lo = np.take(f, np.arange(0, n), axis=a)
            rows += [cells.ravel(), cells.ravel()]
            cols += [hi.ravel(), lo.ravel()]
            vals += [np.full(cells.size, 1.0 / h), np.full(cells.size, -1.0 / h)]
        return sp.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(self.n_total, self.n_faces))

    @cached_property
    def laplacian_matrix(self):
        """Neumann Laplacian ``div grad`` on cells (negative semidefinite)."""
        return (self.divergence_matrix @ self.gradient_matrix).tocsr()

    @cached_property
    def _strain_operators(self):
        return _build_strain_operators(self)

    @property
    def strain_matrix(self):
        """Faces -> tensor sites, with wall ghost values set to zero wall velocity."""
        return self._strain_operators[0]

    @property
    def wall_strain_matrix(self):
        """Wall velocities -> tensor sites (the complement of :attr:`strain_matrix`)."""
        return self._strain_operators[1]

    @property
    def wall_extrapolation_matrix(self):
        """Faces -> wall velocities by linear extrapolation of the two nearest faces."""
        return self._strain_operators[2]

    @property
    def wall_sites(self) -> WallSites:
        return self._strain_operators[3]

    @cached_property
    def wall_row_mask(self):
        m = np.zeros(self.n_sites, dtype=bool)
        m[self.wall_sites.row] = True
        return m

    @cached_property
    def interior_strain_active(self):
        """Strain rows away from slip sites, restricted to active faces."""
        D = self.strain_matrix[~self.wall_row_mask]
        return D[:, self.active_faces].tocsr()

    def site_norms(self, site_values):
        """Frobenius norm of a staggered tensor evaluated at each component's own sites."""
        dim = self.dim
        comps = self.tensor_components
        arrays = [site_values[self.site_offsets[k]:self.site_offsets[k + 1]].reshape(
            self.stagger_shape(component_stagger(dim, c))) for k, c in enumerate(comps)]
        out = np.empty(self.n_sites)
        for k, c in enumerate(comps):
            target = component_stagger(dim, c)
            sq = np.zeros(self.stagger_shape(target))
            for j, cj in enumerate(comps):
                val = interpolate(self, arrays[j], component_stagger(dim, cj), target)
                sq += (1.0 if cj[0] == cj[1] else 2.0) * val * val
            out[self.site_offsets[k]:self.site_offsets[k + 1]] = np.sqrt(sq).ravel()
        return out

    def cells_to_sites(self, cell_values):
        """Average a cell-centred scalar onto every tensor site."""
        dim = self.dim
        cells = (False,) * dim
        return np.concatenate([
            interpolate(self, cell_values, cells, component_stagger(dim, c)).ravel()
            for c in self.tensor_components])

    @cached_property
    def convection_pairs(self):
        return _build_convection_pairs(self)

    @cached_property
    def _laplacian_preconditioner(self):
        # pinning one cell makes the Neumann operator nonsingular; its LU is an
        # SPD preconditioner on the zero-mean subspace
        A = (-self.laplacian_matrix).tolil()
        A[0, 0] += 1.0 / min(self.spacing) ** 2
        return spla.splu(A.tocsc())

    def check_compatible(self, other):
        if other != self:
            raise GridError("fields live on different grids")


def _axis_take(arr, axis, idx):
    return np.take(arr, idx, axis=axis)


def _build_strain_operators(grid: StaggeredGrid):
    dim = grid.dim
    rows, cols, vals = [], [], []
    wrows, wcols, wvals = [], [], []
    erows, ecols, evals = [], [], []
    wall = {k: [] for k in WallSites.__dataclass_fields__}
    n_wall = 0

    for k, comp in enumerate(grid.tensor_components):
        S = grid.site_index(k)
        a, b = comp
        if a == b:
            u = grid.face_index(a)
            h = grid.spacing[a]
            n = grid.n_cells[a]
            if grid.periodic[a]:
                hi, lo = np.roll(u, -1, axis=a), u
            else:
                hi = _axis_take(u, a, np.arange(1, n + 1))
                lo = _axis_take(u, a, np.arange(0, n))
            rows += [S.ravel(), S.ravel()]
            cols += [hi.ravel(), lo.ravel()]
            vals += [np.full(S.size, 1.0 / h), np.full(S.size, -1.0 / h)]
            continue
        # off-diagonal: 1/2 (d_b u_a + d_a u_b) on edges
        for c, x in ((a, b), (b, a)):
            u = grid.face_index(c)  # face-type along c, cell-type along x
            h = grid.spacing[x]
            n = grid.n_cells[x]
            if grid.periodic[x]:
                rows += [S.ravel(), S.ravel()]
                cols += [u.ravel(), np.roll(u, 1, axis=x).ravel()]
                vals += [np.full(S.size, 0.5 / h), np.full(S.size, -0.5 / h)]
                continue
            Si = _axis_take(S, x, np.arange(1, n))
            rows += [Si.ravel(), Si.ravel()]
            cols += [_axis_take(u, x, np.arange(1, n)).ravel(), _axis_take(u, x, np.arange(0, n - 1)).ravel()]
            vals += [np.full(Si.size, 0.5 / h), np.full(Si.size, -0.5 / h)]
            # boundary edges along x: ghost for u_c across the wall normal to x
            for side, e_idx, adj_idx, nxt_idx, sign in ((0, 0, 0, 1, 1.0), (1, n, n - 1, n - 2, -1.0)):
                Se = _axis_take(S, x, e_idx)
                ua = _axis_take(u, x, adj_idx)
                u2 = _axis_take(u, x, nxt_idx)
                # corner edges: u_c sits on a wall-normal face of axis c
                corner = np.zeros(Se.shape, dtype=bool)
                if not grid.periodic[c]:
                    c_ax = c if c < x else c - 1
                    sl = [slice(None)] * corner.ndim
                    for end in (0, -1):
                        sl[c_ax] = end
                        corner[tuple(sl)] = True
                sel = ~corner
                # non-corner: D = sign (u_adj - v_wall) / h, v_wall a separate unknown
                rows.append(Se[sel])
                cols.append(ua[sel])
                vals.append(np.full(sel.sum(), sign / h))
                m = int(sel.sum())
                wid = np.arange(n_wall, n_wall + m)
                wrows.append(Se[sel])
                wcols.append(wid)
                wvals.append(np.full(m, -sign / h))
                erows += [wid, wid]
                ecols += [ua[sel], u2[sel]]
                evals += [np.full(m, 1.5), np.full(m, -0.5)]
                plane = np.arange(Se.size).reshape(Se.shape)
                wall["row"].append(Se[sel])
                wall["face"].append(ua[sel])
                wall["face2"].append(u2[sel])
                wall["sign"].append(np.full(m, sign))
                wall["h"].append(np.full(m, h))
                wall["axis"].append(np.full(m, x))
                wall["side"].append(np.full(m, side))
                wall["comp"].append(np.full(m, c))
                wall["plane_index"].append(plane[sel])
                n_wall += m
                # corner: v_wall extrapolated linearly, folded into the row
                rows += [Se[corner], Se[corner]]
                cols += [ua[corner], u2[corner]]
                vals += [np.full(corner.sum(), sign * (1.0 - 1.5) / h),
                         np.full(corner.sum(), sign * 0.5 / h)]

    shape = (grid.n_sites, grid.n_faces)
    cat = lambda xs, dt=float: np.concatenate(xs).astype(dt) if xs else np.zeros(0, dtype=dt)
    Dm = sp.csr_matrix((cat(vals), (cat(rows, int), cat(cols, int))), shape=shape)
    Wm = sp.csr_matrix((cat(wvals), (cat(wrows, int), cat(wcols, int))), shape=(grid.n_sites, n_wall))
    Em = sp.csr_matrix((cat(evals), (cat(erows, int), cat(ecols, int))), shape=(n_wall, grid.n_faces))
    sites = WallSites(**{
        key: cat(v, float if key in ("sign", "h") else int) for key, v in wall.items()})
    return Dm, Wm, Em, sites


def _build_convection_pairs(grid: StaggeredGrid):
    """Pairs of neighbouring velocity unknowns sharing a control-volume face.

    Returns ``(lo, hi, inv2h, W)`` where ``W @ u`` gives the transporting
    velocity on each shared face; the skew-symmetric convection operator has
    entries ``+w/(2h)`` at ``(lo, hi)`` and ``-w/(2h)`` at ``(hi, lo)``.
    """
    dim = grid.dim
    lo_l, hi_l, inv_l = [], [], []
    wr, wc, wv = [], [], []
    n_pairs = 0
    for a in range(dim):
        ua = grid.face_index(a)
        for b in range(dim):
            h = grid.spacing[b]
            n = grid.n_cells[b]
            if b == a:
                if grid.periodic[a]:
                    lo, hi = ua, np.roll(ua, -1, axis=a)
                else:
                    lo = _axis_take(ua, a, np.arange(0, n))
                    hi = _axis_take(ua, a, np.arange(1, n + 1))
                wfaces = [(lo, 0.5), (hi, 0.5)]
            else:
                if grid.periodic[b]:
                    lo, hi = ua, np.roll(ua, -1, axis=b)
                    ub = grid.face_index(b)  # shared faces e_b = c_b + 1 along b
                    ub_e = np.roll(ub, -1, axis=b) if True else ub
                else:
                    lo = _axis_take(ua, b, np.arange(0, n - 1))
                    hi = _axis_take(ua, b, np.arange(1, n))
                    ub_e = _axis_take(grid.face_index(b), b, np.arange(1, n))
                # u_b at the shared edge: average over the two cells along a
                na = grid.n_cells[a]
                if grid.periodic[a]:
                    w_hi, w_lo = ub_e, np.roll(ub_e, 1, axis=a)
                    wfaces = [(w_hi, 0.5), (w_lo, 0.5)]
                else:
                    # edges at a-walls belong to inactive rows; clamp to stay in range
                    i_hi = np.minimum(np.arange(na + 1), na - 1)
                    i_lo = np.maximum(np.arange(na + 1) - 1, 0)
                    wfaces = [(_axis_take(ub_e, a, i_hi), 0.5), (_axis_take(ub_e, a, i_lo), 0.5)]
            m = lo.size
            pid = np.arange(n_pairs, n_pairs + m)
            lo_l.append(lo.ravel())
            hi_l.append(hi.ravel())
            inv_l.append(np.full(m, 0.5 / h))
            for arr, wgt in wfaces:
                wr.append(pid)
                wc.append(arr.ravel())
                wv.append(np.full(m, wgt))
            n_pairs += m
    W = sp.csr_matrix((np.concatenate(wv), (np.concatenate(wr), np.concatenate(wc))),
                      shape=(n_pairs, grid.n_faces))
    return np.concatenate(lo_l), np.concatenate(hi_l), np.concatenate(inv_l), W


# ---------------------------------------------------------------------------
# field containers


@dataclass
class ScalarField:
    grid: StaggeredGrid
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float).reshape(self.grid.n_cells)

    @classmethod
    def zeros(cls, grid):
        return cls(grid, np.zeros(grid.n_cells))

    @classmethod
    def constant(cls, grid, value):
        return cls(grid, np.full(grid.n_cells, float(value)))

    @classmethod
    def from_function(cls, grid, fn):
        return cls(grid, fn(*grid.cell_centers()))

    def flat(self):
        return self.values.ravel()

    def mean(self):
        return float(np.mean(self.values))

    def copy(self):
        return ScalarField(self.grid, self.values.copy())


@dataclass
class VectorField:
    """Face-normal velocity components; ``components[a]`` has ``grid.face_shape(a)``."""

    grid: StaggeredGrid
    components: tuple
    wall_constrained: bool = True

    def __post_init__(self):
        comps = tuple(np.asarray(c, dtype=float).reshape(self.grid.face_shape(a))
                      for a, c in enumerate(self.components))
        if len(comps) != self.grid.dim:
            raise GridError("need one component per axis")
        self.components = comps
        if self.wall_constrained:
            for a, c in enumerate(comps):
                if not self.grid.periodic[a]:
                    sl = [slice(None)] * self.grid.dim
                    for end in (0, -1):
                        sl[a] = end
                        if np.any(c[tuple(sl)] != 0.0):
                            raise GridError("wall-constrained field has nonzero normal velocity on a wall")

    @classmethod
    def zeros(cls, grid):
        return cls(grid, tuple(np.zeros(grid.face_shape(a)) for a in range(grid.dim)))

    @classmethod
    def from_flat(cls, grid, flat, wall_constrained=True):
        flat = np.asarray(flat, dtype=float)
        o = grid.face_offsets
        return cls(grid, tuple(flat[o[a]:o[a + 1]] for a in range(grid.dim)), wall_constrained)

    @classmethod
    def from_function(cls, grid, fn, wall_constrained=True):
        """Sample ``fn(x, y[, z]) -> tuple of components`` at face centres.

        With ``wall_constrained`` the wall-normal boundary faces are zeroed.
        """
        comps = []
        for a in range(grid.dim):
            c = np.asarray(fn(*grid.face_centers(a))[a], dtype=float) * np.ones(grid.face_shape(a))
            comps.append(c)
        flat = np.concatenate([c.ravel() for c in comps])
        if wall_constrained:
            flat = np.where(grid.face_mask, flat, 0.0)
        return cls.from_flat(grid, flat, wall_constrained)

    def flat(self):
        return np.concatenate([c.ravel() for c in self.components])

    def copy(self):
        return VectorField(self.grid, tuple(c.copy() for c in self.components), self.wall_constrained)

    def max_abs(self):
        return max(float(np.max(np.abs(c))) for c in self.components)


@dataclass
class SymTensorField:
    """Symmetric tensor field.

    ``layout='staggered'`` keeps each component at its MAC site;
    ``layout='cell'`` holds every component at cell centres.
    ``components`` maps ``(a, b)`` with ``a <= b`` to arrays.
    """

    grid: StaggeredGrid
    components: dict
    layout: str = "staggered"

    def __post_init__(self):
        for comp in self.grid.tensor_components:
            stag = component_stagger(self.grid.dim, comp) if self.layout == "staggered" else (False,) * self.grid.dim
            self.components[comp] = np.asarray(self.components[comp], dtype=float).reshape(
                self.grid.stagger_shape(stag))

    @classmethod
    def from_sites(cls, grid, flat):
        flat = np.asarray(flat, dtype=float)
        comps = {c: flat[grid.site_offsets[k]:grid.site_offsets[k + 1]]
                 for k, c in enumerate(grid.tensor_components)}
        return cls(grid, comps, "staggered")

    def site_flat(self):
        if self.layout != "staggered":
            raise GridError("site_flat needs the staggered layout")
        return np.concatenate([self.components[c].ravel() for c in self.grid.tensor_components])

    def to_cells(self):
        """Interpolate every component to cell centres."""
        if self.layout == "cell":
            return self
        dim = self.grid.dim
        cells = (False,) * dim
        return SymTensorField(self.grid, {
            c: interpolate(self.grid, v, component_stagger(dim, c), cells)
            for c, v in self.components.items()}, "cell")

    def entries(self):
        """Cell-layout components stacked as ``(..., m)`` in SymTensor order."""
        f = self.to_cells()
        return np.stack([f.components[c] for c in self.grid.tensor_components], axis=-1)

    def norm(self):
        """Frobenius norm at cell centres."""
        e = self.entries()
        w = np.array([1.0 if a == b else 2.0 for a, b in self.grid.tensor_components])
        return np.sqrt(np.sum(w * e * e, axis=-1))


# ---------------------------------------------------------------------------
# operators


def interpolate(grid: StaggeredGrid, arr, from_stag, to_stag):
    """Average ``arr`` from one stagger to another, one axis at a time.

    Cell-to-face averaging next to a wall copies the single interior value.
    """
    out = np.asarray(arr, dtype=float)
    for ax, (s_from, s_to) in enumerate(zip(from_stag, to_stag)):
        if s_from == s_to:
            continue
        n = grid.n_cells[ax]
        if grid.periodic[ax]:
            if s_from:  # face -> cell
                out = 0.5 * (out + np.roll(out, -1, axis=ax))
            else:  # cell -> face
                out = 0.5 * (out + np.roll(out, 1, axis=ax))
            continue
        if s_from:
            out = 0.5 * (_axis_take(out, ax, np.arange(0, n)) + _axis_take(out, ax, np.arange(1, n + 1)))
        else:
            lo = _axis_take(out, ax, np.maximum(np.arange(n + 1) - 1, 0))
            hi = _axis_take(out, ax, np.minimum(np.arange(n + 1), n - 1))
            out = 0.5 * (lo + hi)
    return out


def gradient(p: ScalarField) -> VectorField:
    g = p.grid
    return VectorField.from_flat(g, g.gradient_matrix @ p.flat())


def divergence(v: VectorField) -> ScalarField:
    g = v.grid
    return ScalarField(g, g.divergence_matrix @ v.flat())


def laplacian(p: ScalarField) -> ScalarField:
    g = p.grid
    return ScalarField(g, g.laplacian_matrix @ p.flat())


def sym_gradient(v: VectorField, wall_velocity=None) -> SymTensorField:
    """Staggered symmetric gradient ``D(v)``.

    ``wall_velocity`` gives the tangential velocity at every wall site of
    ``grid.wall_sites``; when omitted it is extrapolated linearly from the
    interior, which makes the operator exact for affine fields.
    """
    g = v.grid
    u = v.flat()
    vw = g.wall_extrapolation_matrix @ u if wall_velocity is None else np.asarray(wall_velocity, dtype=float)
    return SymTensorField.from_sites(g, g.strain_matrix @ u + g.wall_strain_matrix @ vw)


@dataclass(frozen=True)
class PoissonInfo:
    iterations: int
    residual: float
    removed_mean: float


def _pcg(apply_A, b, precond, tol, max_iter):
    """Preconditioned CG restricted to zero-mean vectors."""
    x = np.zeros_like(b)
    r = b.copy()
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return x, 0, 0.0
    z = precond(r)
    z -= z.mean()
    d = z.copy()
    rz = r @ z
    for it in range(1, max_iter + 1):
        Ad = apply_A(d)
        alpha = rz / (d @ Ad)
        x += alpha * d
        r -= alpha * Ad
        res = np.linalg.norm(r) / bnorm
        if res <= tol:
            return x, it, res
        z = precond(r)
        z -= z.mean()
        rz_new = r @ z
        d = z + (rz_new / rz) * d
        rz = rz_new
    raise PoissonError(f"Neumann Poisson solve did not converge in {max_iter} iterations", res)


def neumann_laplacian_solve(rhs: ScalarField, tol=1e-12, max_iter=200, return_info=False):
    """Zero-mean solution of ``-Lap_N p = rhs`` with homogeneous Neumann closure.

    A nonzero mean of ``rhs`` is projected out (reported in the info).
    """
    g = rhs.grid
    b = rhs.flat().astype(float)
    m = float(np.mean(b))
    b = b - m
    A = -g.laplacian_matrix
    lu = g._laplacian_preconditioner
    x, it, res = _pcg(lambda y: A @ y, b, lu.solve, tol, max_iter)
    x -= x.mean()
    out = ScalarField(g, x)
    if return_info:
        return out, PoissonInfo(it, res, m)
    return out


def upwind_outflow_rate(v: VectorField) -> np.ndarray:
    """Per-cell sum of outgoing face speeds over spacing (1/s)."""
    g = v.grid
    rate = np.zeros(g.n_cells)
    for a, c in enumerate(v.components):
        h = g.spacing[a]
        n = g.n_cells[a]
        if g.periodic[a]:
            hi, lo = np.roll(c, -1, axis=a), c
        else:
            hi, lo = _axis_take(c, a, np.arange(1, n + 1)), _axis_take(c, a, np.arange(0, n))
        rate += (np.maximum(hi, 0.0) + np.maximum(-lo, 0.0)) / h
    return rate


def _upwind_flux_divergence(c: np.ndarray, v: VectorField) -> np.ndarray:
    g = v.grid
    out = np.zeros(g.n_cells)
    for a, u in enumerate(v.components):
        h = g.spacing[a]
        n = g.n_cells[a]
        if g.periodic[a]:
            c_lo = np.roll(c, 1, axis=a)  # cell below face f
            flux = np.where(u > 0, u * c_lo, u * c)  # face f sits between cells f-1 and f
            out += (np.roll(flux, -1, axis=a) - flux) / h
        else:
            flux = np.zeros(g.face_shape(a))
            inner = [slice(None)] * g.dim
            inner[a] = slice(1, n)
            ui = u[tuple(inner)]
            c_lo = _axis_take(c, a, np.arange(0, n - 1))
            c_hi = _axis_take(c, a, np.arange(1, n))
            flux[tuple(inner)] = np.where(ui > 0, ui * c_lo, ui * c_hi)
            out += (_axis_take(flux, a, np.arange(1, n + 1)) - _axis_take(flux, a, np.arange(0, n))) / h
    return out


def advect_diffuse_step(c: ScalarField, v: VectorField, kappa, src: ScalarField, dt):
    """Explicit upwind advection then implicit Neumann diffusion.

    Conservative flux form; with ``src = 0`` the update is a convex
    combination followed by an M-matrix solve, so extrema cannot grow.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    if kappa < 0:
        raise ValueError("kappa must be non-negative")
    g = c.grid
    cfl = float(np.max(upwind_outflow_rate(v))) * dt
    if cfl > 1.0:
        raise CFLError(cfl)
    rhs = c.values - dt * _upwind_flux_divergence(c.values, v) + dt * src.values
    if kappa == 0.0:
        return ScalarField(g, rhs)
    A = sp.identity(g.n_total, format="csc") - (dt * kappa) * g.laplacian_matrix.tocsc()
    x = spla.splu(A).solve(rhs.ravel())
    return ScalarField(g, x)
