"""Time integration of the regularised pore-pressure-activated Bingham system.

One step advances velocity, pressure and pore pressure by ``dt``:

1. ``dt`` from the upwind CFL limit of the current velocity;
2. Picard sweeps: momentum predictor (implicit viscosity, plastic stress and
   wall slip with coefficients lagged from the previous sweep, linearly
   implicit skew-symmetric convection) followed by a Neumann-Poisson
   projection;
3. pore-pressure transport with the end-of-step velocity;
4. refresh of the cached regularised extra stress.

The plastic stress ``tau D / (|D| + eps)`` enters each sweep as an extra
viscosity ``tau / (|D_lag| + eps)`` acting on the new strain, which keeps
the step linear and its dissipation non-negative whatever the lag.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np
import pyamg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .constitutive import MaterialParams, yield_stress
from .grid import (
    CFLError,
    PoissonError,
    ScalarField,
    StaggeredGrid,
    SymTensorField,
    VectorField,
    advect_diffuse_step,
    component_stagger,
    divergence,
    interpolate,
    neumann_laplacian_solve,
    sym_gradient,
    upwind_outflow_rate,
)

log = logging.getLogger(__name__)

__all__ = [
    "SolverError",
    "Walls",
    "ForcingSpec",
    "DarcyParams",
    "SolverConfig",
    "SimulationState",
    "StepRecord",
    "WallClosure",
    "truncation",
    "choose_dt",
    "initial_state",
    "momentum_predictor",
    "project",
    "enforce_slip",
    "pore_pressure_step",
    "step",
    "darcy_velocity",
    "regularized_extra_stress_field",
]


class SolverError(RuntimeError):
    """A sub-solver failed; ``step_index`` names the step being attempted."""

    def __init__(self, message, step_index=None):
        super().__init__(message if step_index is None else f"step {step_index}: {message}")
        self.step_index = step_index


@dataclass(frozen=True)
class Walls:
    """Wall model and prescribed wall velocities.

    ``model`` is ``"stickslip"`` (regularised threshold slip) or ``"noslip"``.
    ``velocity`` maps ``(axis, side)`` (side 0 = low, 1 = high) to the wall's
    velocity vector, e.g. a moving lid.
    """

    model: str = "stickslip"
    velocity: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.model not in ("stickslip", "noslip"):
            raise ValueError(f"unknown wall model {self.model!r}")


def _zero_vector(t, grid):
    return VectorField.zeros(grid)


def _zero_scalar(t, grid):
    return ScalarField.zeros(grid)


@dataclass(frozen=True)
class ForcingSpec:
    """Data of the problem as factories of time.

    ``body_force(t, grid)`` gives ``b`` on faces [m/s^2], ``source(t, grid)``
    the pore-pressure source ``g`` and ``solid_pressure(t, grid)`` the
    hydrostatic pressure ``p_s`` on cells.  ``solid_pressure_gradient`` may
    return the analytic ``grad p_s`` at cell centres as a list of arrays;
    otherwise the grid gradient is used.  ``steady_solid_pressure`` declares
    ``p_s`` constant in time.
    """

    body_force: Callable = _zero_vector
    source: Callable = _zero_scalar
    solid_pressure: Callable = _zero_scalar
    solid_pressure_gradient: Optional[Callable] = None
    walls: Walls = field(default_factory=Walls)
    steady_solid_pressure: bool = True


@dataclass(frozen=True)
class DarcyParams:
    phi0: float = 0.05
    mu_f: float = 1.0
    k0: float = 1.0
    rho_f: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.phi0 < 1.0:
            raise ValueError(f"invalid darcy parameter phi0 = {self.phi0!r}")
        for name in ("mu_f", "k0", "rho_f"):
            if not getattr(self, name) > 0:
                raise ValueError(f"invalid darcy parameter {name} = {getattr(self, name)!r}")


@dataclass(frozen=True)
class SolverConfig:
    dt_initial: float = 1e-3
    cfl_target: float = 0.5
    picard_iters: int = 2
    picard_tol: float = 1e-8
    projection_tol: float = 1e-10
    poisson_tol: float = 1e-12
    convection_truncation_n: Optional[float] = None
    end_time: float = 0.5
    max_steps: int = 0
    max_dt_halvings: int = 8

    def __post_init__(self):
        positive = ("dt_initial", "picard_tol", "projection_tol", "poisson_tol", "end_time")
        for name in positive:
            if not getattr(self, name) > 0:
                raise ValueError(f"invalid solver setting {name} = {getattr(self, name)!r}")
        if not 0.0 < self.cfl_target < 1.0:
            raise ValueError(f"invalid solver setting cfl_target = {self.cfl_target!r}")
        if self.picard_iters < 1:
            raise ValueError(f"invalid solver setting picard_iters = {self.picard_iters!r}")
        if self.max_steps < 0:
            raise ValueError(f"invalid solver setting max_steps = {self.max_steps!r}")
        n = self.convection_truncation_n
        if n is not None and not n > 0:
            raise ValueError(f"invalid solver setting convection_truncation_n = {n!r}")


@dataclass(frozen=True)
class WallClosure:
    """Condensed wall law for one sweep.

    Each slip site couples the adjacent velocity ``u0`` to the wall velocity
    ``vw`` through the strain ``(u0 - vw)/h`` (conductance ``kappa``) and to
    the wall through the lagged slip coefficient ``r`` (traction
    ``r (vw - U)`` per unit area ``area``).  Eliminating ``vw`` leaves the
    Robin coefficient ``c``.  ``r = inf`` encodes no-slip.
    """

    r: np.ndarray
    kappa: np.ndarray
    area: np.ndarray
    U: np.ndarray
    noslip: bool

    @property
    def c(self):
        if self.noslip:
            return self.kappa.copy()
        ra = self.r * self.area
        return self.kappa * ra / (self.kappa + ra)

    def wall_velocity(self, u0):
        if self.noslip:
            return self.U.copy()
        ra = self.r * self.area
        return (self.kappa * u0 + ra * self.U) / (self.kappa + ra)

    def traction(self, vw):
        """Tangential traction ``s`` exerted by the fluid at each slip site."""
        if self.noslip:
            raise ValueError("no-slip walls carry no slip-law traction")
        return self.r * (vw - self.U)


@dataclass
class StepRecord:
    """What the last accepted step actually used, for exact bookkeeping."""

    dt: float
    v_old: np.ndarray
    v_star: np.ndarray
    body_force: np.ndarray
    site_weight: np.ndarray
    closure: WallClosure
    wall_velocity_star: np.ndarray
    sweeps: int
    picard_change: float
    projection_mean: float


@dataclass
class SimulationState:
    t: float
    v: VectorField
    p: ScalarField
    p_f: ScalarField
    Z: SymTensorField
    step_index: int = 0
    wall_velocity: np.ndarray = None
    record: Optional[StepRecord] = None

    @property
    def grid(self) -> StaggeredGrid:
        return self.v.grid


# ---------------------------------------------------------------------------
# helpers


def truncation(u, n):
    """C^1 cutoff: 1 on ``|u| <= n``, 0 on ``|u| >= 2n``, cubic blend between, ``|G'| <= 1.5/n``."""
    s = np.clip((np.abs(u) - n) / n, 0.0, 1.0)
    return 1.0 - s * s * (3.0 - 2.0 * s)


def _wall_velocity_vectors(grid: StaggeredGrid, walls: Walls):
    """Prescribed tangential wall velocity at each slip site."""
    ws = grid.wall_sites
    U = np.zeros(len(ws))
    for (axis, side), vel in walls.velocity.items():
        sel = (ws.axis == axis) & (ws.side == side)
        if np.any(sel):
            U[sel] = np.asarray(vel, dtype=float)[ws.comp[sel]]
    return U


def _slip_magnitude(grid: StaggeredGrid, rel):
    """``|v_tau - U|`` at every slip site, interpolating the other tangential components."""
    ws = grid.wall_sites
    if grid.dim == 2:
        return np.abs(rel)
    out = np.abs(rel) ** 2
    dim = grid.dim
    for axis in range(dim):
        if grid.periodic[axis]:
            continue
        for side in (0, 1):
            planes = {}
            for t in range(dim):
                if t == axis:
                    continue
                comp = (min(t, axis), max(t, axis))
                stag = component_stagger(dim, comp)
                shape = list(grid.stagger_shape(stag))
                shape[axis] = 1
                arr = np.zeros(shape)
                sel = (ws.axis == axis) & (ws.side == side) & (ws.comp == t)
                arr.ravel()[ws.plane_index[sel]] = rel[sel]
                planes[t] = (arr, stag, sel)
            for t, (arr, stag, sel) in planes.items():
                for t2, (arr2, stag2, _) in planes.items():
                    if t2 == t:
                        continue
                    other = interpolate(grid, arr2, stag2, stag)
                    out[sel] += other.ravel()[ws.plane_index[sel]] ** 2
    return np.sqrt(out)


def _tau_cells(p_s: ScalarField, p_f: ScalarField, params: MaterialParams):
    return yield_stress(p_s.values, p_f.values, params.q_star)


def _site_weights(grid, u, vw, tau_sites, params):
    """Effective viscosity ``2 nu + tau / (|D| + eps)`` at every tensor site."""
    D = grid.strain_matrix @ u + grid.wall_strain_matrix @ vw
    return 2.0 * params.nu_star + tau_sites / (grid.site_norms(D) + params.epsilon)


def enforce_slip(v: VectorField, wall_velocity, wall_weights, params: MaterialParams, walls: Walls) -> WallClosure:
    """Wall closure from the lagged iterate.

    ``wall_velocity`` holds the tangential wall velocities of the previous
    iterate and ``wall_weights`` the effective viscosity at the slip sites.
    The slip coefficient is ``gamma* + s*/(|v_tau| + eps)``, so the traction
    ``r v_tau`` equals the regularised stick-slip traction plus friction.
    Wall-normal velocities are zero by construction of the velocity space.
    """
    g = v.grid
    ws = g.wall_sites
    U = _wall_velocity_vectors(g, walls)
    vol = g.site_volume[ws.row]
    kappa = np.asarray(wall_weights, dtype=float) * 2.0 * vol / ws.h ** 2
    area = g.cell_volume / ws.h
    if walls.model == "noslip":
        return WallClosure(np.full(len(ws), np.inf), kappa, area, U, True)
    rel = np.asarray(wall_velocity, dtype=float) - U
    r = params.gamma_star + params.s_star / (_slip_magnitude(g, rel) + params.epsilon)
    return WallClosure(r, kappa, area, U, False)


def _initial_wall_velocity(v: VectorField, walls: Walls):
    g = v.grid
    if walls.model == "noslip":
        return _wall_velocity_vectors(g, walls)
    return g.wall_extrapolation_matrix @ v.flat()


def _convection_matrix(grid, u_adv, truncation_n):
    lo, hi, inv2h, W = grid.convection_pairs
    w = (W @ u_adv) * inv2h
    if truncation_n is not None:
        speed2 = _face_speed_squared(grid, u_adv)
        w = w * 0.5 * (truncation(speed2[lo], truncation_n) + truncation(speed2[hi], truncation_n))
    return sp.csr_matrix((np.concatenate([w, -w]), (np.concatenate([lo, hi]), np.concatenate([hi, lo]))),
                         shape=(grid.n_faces, grid.n_faces))


def _face_speed_squared(grid, u):
    """``|v|^2`` at every face, other components interpolated to the face."""
    v = VectorField.from_flat(grid, u, wall_constrained=False)
    out = []
    for a in range(grid.dim):
        target = grid.face_stagger(a)
        s = v.components[a] ** 2
        for b in range(grid.dim):
            if b != a:
                s = s + interpolate(grid, v.components[b], grid.face_stagger(b), target) ** 2
        out.append(s.ravel())
    return np.concatenate(out)


def choose_dt(state: SimulationState, cfg: SolverConfig) -> float:
    rate = float(np.max(upwind_outflow_rate(state.v)))
    if rate == 0.0:
        return cfg.dt_initial
    return min(cfg.dt_initial, cfg.cfl_target / rate)


# ---------------------------------------------------------------------------
# sub-steps


def _predict(state, u_lag, vw_lag, tau_sites, b_faces, params, cfg, walls, dt):
    g = state.grid
    act = g.active_faces
    ws = g.wall_sites
    u_n = state.v.flat()
    weights = _site_weights(g, u_lag, vw_lag, tau_sites, params)
    closure = enforce_slip(VectorField.from_flat(g, u_lag), vw_lag, weights[ws.row], params, walls)

    interior = ~g.wall_row_mask
    k = (weights * g.site_multiplicity * g.site_volume)[interior]
    D = g.interior_strain_active
    A = (D.T @ sp.diags(k) @ D).tocsr()
    rho, V = params.rho_star, g.cell_volume
    C = _convection_matrix(g, u_n, cfg.convection_truncation_n)[act][:, act]
    rhs = rho * V * (u_n[act] / dt + b_faces[act])

    c = closure.c
    pos = np.searchsorted(act, ws.face)
    wall_diag = np.bincount(pos, weights=c, minlength=len(act))
    rhs += np.bincount(pos, weights=c * closure.U, minlength=len(act))
    M = A + sp.diags(rho * V / dt + wall_diag) + (rho * V) * C
    x = _solve_momentum(M, rhs)
    u_star = np.zeros(g.n_faces)
    u_star[act] = x
    return u_star, weights, closure


DIRECT_SOLVE_LIMIT = 6000


def _solve_momentum(M, rhs, rtol=1e-13):
    """Direct LU for small systems; GMRES with an AMG cycle on the symmetric part otherwise."""
    if M.shape[0] <= DIRECT_SOLVE_LIMIT:
        x = spla.spsolve(M.tocsc(), rhs)
    else:
        M = M.tocsr()
        # local weighting avoids the randomised spectral-radius estimate, keeping runs reproducible
        ml = pyamg.smoothed_aggregation_solver(((M + M.T) * 0.5).tocsr(), smooth=("jacobi", {"weighting": "local"}))
        x, info = spla.gmres(M, rhs, M=ml.aspreconditioner(cycle="V"), rtol=rtol, atol=0.0,
                             restart=100, maxiter=20)
        if info != 0:
            res = np.linalg.norm(M @ x - rhs) / max(np.linalg.norm(rhs), 1e-300)
            raise SolverError(f"momentum solve did not converge (relative residual {res:.3e})")
    if not np.all(np.isfinite(x)):
        raise SolverError("momentum solve produced non-finite values")
    return x


def momentum_predictor(state: SimulationState, forcing: ForcingSpec, params: MaterialParams,
                       cfg: SolverConfig, dt: float) -> VectorField:
    """One predictor sweep lagged on the current state (no new-time pressure)."""
    g = state.grid
    t1 = state.t + dt
    tau_sites = g.cells_to_sites(_tau_cells(forcing.solid_pressure(t1, g), state.p_f, params))
    vw = state.wall_velocity if state.wall_velocity is not None else _initial_wall_velocity(state.v, forcing.walls)
    b = forcing.body_force(t1, g).flat()
    u_star, _, _ = _predict(state, state.v.flat(), vw, tau_sites, b, params, cfg, forcing.walls, dt)
    return VectorField.from_flat(g, u_star)


def project(v_star: VectorField, rho_star: float, dt: float, tol: float = 1e-10, poisson_tol: float = 1e-12):
    """Remove the gradient part of ``v_star``.

    Solves ``-Lap_N q = -(rho/dt) div v_star`` and returns
    ``(v_star - (dt/rho) grad q, q)``.
    """
    g = v_star.grid
    u = v_star.flat()
    q_total = np.zeros(g.n_total)
    for _ in range(4):
        rhs = ScalarField(g, -(rho_star / dt) * (g.divergence_matrix @ u))
        q = neumann_laplacian_solve(rhs, tol=poisson_tol).flat()
        u = u - (dt / rho_star) * (g.gradient_matrix @ q)
        q_total += q
        if np.max(np.abs(g.divergence_matrix @ u)) <= tol:
            return VectorField.from_flat(g, u), ScalarField(g, q_total - q_total.mean())
    raise PoissonError("projection left divergence above tolerance",
                       float(np.max(np.abs(g.divergence_matrix @ u))))


def _p_s_advection_source(v: VectorField, p_s: ScalarField, forcing: ForcingSpec, t):
    """``v . grad p_s`` at cell centres."""
    g = v.grid
    cells = (False,) * g.dim
    if forcing.solid_pressure_gradient is not None:
        grad = forcing.solid_pressure_gradient(t, g)
        out = np.zeros(g.n_cells)
        for a in range(g.dim):
            out += interpolate(g, v.components[a], g.face_stagger(a), cells) * grad[a]
        return out
    gp = VectorField.from_flat(g, g.gradient_matrix @ p_s.flat())
    out = np.zeros(g.n_cells)
    for a in range(g.dim):
        out += interpolate(g, v.components[a] * gp.components[a], g.face_stagger(a), cells)
    return out


def pore_pressure_step(state: SimulationState, forcing: ForcingSpec, params: MaterialParams, dt: float,
                       t_source: Optional[float] = None) -> ScalarField:
    """Advance ``p_f`` with source ``g + v . grad p_s`` using ``state.v``."""
    g = state.grid
    t = state.t + dt if t_source is None else t_source
    src = forcing.source(t, g).values
    if not forcing.steady_solid_pressure or forcing.solid_pressure_gradient is not None:
        src = src + _p_s_advection_source(state.v, forcing.solid_pressure(t, g), forcing, t)
    else:
        p_s = forcing.solid_pressure(t, g)
        if np.ptp(p_s.values) > 0:
            src = src + _p_s_advection_source(state.v, p_s, forcing, t)
    return advect_diffuse_step(state.p_f, state.v, params.K, ScalarField(g, src), dt)


def regularized_extra_stress_field(v: VectorField, wall_velocity, p_s: ScalarField, p_f: ScalarField,
                                   params: MaterialParams):
    """Cell-centred strain rate and regularised extra stress ``tau D/(|D| + eps)``."""
    D = sym_gradient(v, wall_velocity).to_cells()
    tau = _tau_cells(p_s, p_f, params)
    factor = tau / (D.norm() + params.epsilon)
    Z = SymTensorField(v.grid, {c: factor * arr for c, arr in D.components.items()}, "cell")
    return D, Z


def initial_state(grid: StaggeredGrid, v0: VectorField, p_f0: ScalarField, forcing: ForcingSpec,
                  params: MaterialParams, cfg: SolverConfig, t0: float = 0.0) -> SimulationState:
    """Project the initial velocity and recover the hydrostatic pressure of ``rho b``."""
    v, _ = project(v0, params.rho_star, cfg.dt_initial, cfg.projection_tol, cfg.poisson_tol)
    b = forcing.body_force(t0, grid)
    _, p = project(b, params.rho_star, params.rho_star, cfg.projection_tol, cfg.poisson_tol)
    # with dt = rho the returned potential satisfies grad q = gradient part of b
    p = ScalarField(grid, params.rho_star * p.values)
    vw = _initial_wall_velocity(v, forcing.walls)
    _, Z = regularized_extra_stress_field(v, vw, forcing.solid_pressure(t0, grid), p_f0, params)
    return SimulationState(t0, v, p, p_f0.copy(), Z, 0, vw, None)


def _advance(state, forcing, params, cfg, dt):
    g = state.grid
    t1 = state.t + dt
    walls = forcing.walls
    p_s1 = forcing.solid_pressure(t1, g)
    tau_sites = g.cells_to_sites(_tau_cells(p_s1, state.p_f, params))
    b = forcing.body_force(t1, g).flat()
    u_lag = state.v.flat()
    vw_lag = state.wall_velocity if state.wall_velocity is not None else _initial_wall_velocity(state.v, walls)
    ws = g.wall_sites
    change = np.inf
    for sweep in range(1, cfg.picard_iters + 1):
        u_star, weights, closure = _predict(state, u_lag, vw_lag, tau_sites, b, params, cfg, walls, dt)
        v_new, q = project(VectorField.from_flat(g, u_star), params.rho_star, dt,
                           cfg.projection_tol, cfg.poisson_tol)
        u_new = v_new.flat()
        change = float(np.max(np.abs(u_new - u_lag)))
        u_lag = u_new
        vw_lag = closure.wall_velocity(u_new[ws.face])
        if change <= cfg.picard_tol:
            break
    vw_star = closure.wall_velocity(u_star[ws.face])

    moved = replace(state, v=v_new, t=t1)
    if max(float(np.max(upwind_outflow_rate(v_new))) * dt, 0.0) > 1.0:
        raise CFLError(float(np.max(upwind_outflow_rate(v_new))) * dt)
    p_f_new = pore_pressure_step(replace(moved, t=state.t), forcing, params, dt, t_source=t1)
    _, Z = regularized_extra_stress_field(v_new, vw_lag, p_s1, p_f_new, params)
    rec = StepRecord(dt, state.v.flat(), u_star, b, weights, closure, vw_star, sweep, change, 0.0)
    return SimulationState(t1, v_new, q, p_f_new, Z, state.step_index + 1, vw_lag, rec)


def step(state: SimulationState, forcing: ForcingSpec, params: MaterialParams, cfg: SolverConfig,
         dt: Optional[float] = None) -> SimulationState:
    """Advance one accepted step; ``dt`` defaults to the CFL choice and is halved on CFL failure."""
    dt = choose_dt(state, cfg) if dt is None else dt
    for _ in range(cfg.max_dt_halvings + 1):
        try:
            return _advance(state, forcing, params, cfg, dt)
        except CFLError as exc:
            log.debug("step %d: %s, halving dt", state.step_index + 1, exc)
            dt *= 0.5
        except (PoissonError, SolverError, np.linalg.LinAlgError, RuntimeError) as exc:
            raise SolverError(str(exc), state.step_index + 1) from exc
    raise SolverError("CFL condition could not be met by halving dt", state.step_index + 1)


def darcy_velocity(state: SimulationState, darcy: DarcyParams, forcing: ForcingSpec) -> VectorField:
    """Interstitial fluid velocity ``v - k0/(phi0 mu_f) (grad p_f - rho_f b)`` on faces.

    Pure post-processing; wall-normal faces carry the zero Neumann gradient.
    """
    g = state.grid
    grad = g.gradient_matrix @ state.p_f.flat()
    b = forcing.body_force(state.t, g).flat()
    mob = darcy.k0 / (darcy.phi0 * darcy.mu_f)
    drift = np.where(g.face_mask, grad - darcy.rho_f * b, 0.0)
    return VectorField.from_flat(g, state.v.flat() - mob * drift)
