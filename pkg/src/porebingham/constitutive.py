"""Pointwise constitutive laws for the pore-pressure-activated Bingham fluid.

Every function is vectorised: a :class:`SymTensor` may hold a whole batch of
tensors (leading axes), and tangent vectors are arrays of shape ``(..., d)``.
Scalars such as ``tau`` broadcast against the batch shape.

Norms are Frobenius norms throughout, ``|A| = sqrt(A:A)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "ConstitutiveDomainError",
    "SymTensor",
    "MaterialParams",
    "BoundaryVectors",
    "yield_stress",
    "stress_from_strain_exact",
    "strain_from_stress_exact",
    "regularized_stress_extra",
    "check_scalar_constraints",
    "slip_traction_exact",
    "slip_velocity_exact",
    "regularized_slip_traction",
    "check_slip_constraints",
    "monotonicity_gap",
]


class ConstitutiveDomainError(ValueError):
    """Raised when a law is evaluated outside the branch where it is single-valued."""


def _require_finite(*arrays) -> None:
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise ValueError("non-finite input to constitutive evaluation")


# Upper-triangle storage order: diagonal first, then (0,1), (0,2), (1,2).
_PAIRS = {
    2: ((0, 0), (1, 1), (0, 1)),
    3: ((0, 0), (1, 1), (2, 2), (0, 1), (0, 2), (1, 2)),
}


@dataclass(frozen=True)
class SymTensor:
    """Batch of symmetric ``d x d`` tensors stored by their upper triangle.

    ``entries`` has shape ``(..., d(d+1)/2)`` ordered as
    ``[A00, A11, (A22,) A01, (A02, A12)]``.
    """

    entries: np.ndarray
    dim: int = field(default=3)

    def __post_init__(self):
        e = np.asarray(self.entries, dtype=float)
        if self.dim not in (2, 3):
            raise ValueError(f"dim must be 2 or 3, got {self.dim}")
        m = self.dim * (self.dim + 1) // 2
        if e.shape[-1:] != (m,):
            raise ValueError(f"expected trailing axis of length {m}, got shape {e.shape}")
        object.__setattr__(self, "entries", e)

    @classmethod
    def from_matrix(cls, A) -> "SymTensor":
        """Symmetrise ``A`` (shape ``(..., d, d)``) and store its upper triangle."""
        A = np.asarray(A, dtype=float)
        d = A.shape[-1]
        A = 0.5 * (A + np.swapaxes(A, -1, -2))
        return cls(np.stack([A[..., i, j] for i, j in _PAIRS[d]], axis=-1), dim=d)

    @classmethod
    def zeros(cls, shape=(), dim=3) -> "SymTensor":
        return cls(np.zeros(tuple(shape) + (dim * (dim + 1) // 2,)), dim=dim)

    @property
    def shape(self) -> tuple:
        return self.entries.shape[:-1]

    def matrix(self) -> np.ndarray:
        d = self.dim
        A = np.empty(self.shape + (d, d))
        for k, (i, j) in enumerate(_PAIRS[d]):
            A[..., i, j] = self.entries[..., k]
            A[..., j, i] = self.entries[..., k]
        return A

    def _weights(self) -> np.ndarray:
        # off-diagonal entries appear twice in A:B
        d = self.dim
        return np.array([1.0] * d + [2.0] * (len(_PAIRS[d]) - d))

    def ddot(self, other: "SymTensor") -> np.ndarray:
        return np.sum(self._weights() * self.entries * other.entries, axis=-1)

    def norm(self) -> np.ndarray:
        return np.sqrt(self.ddot(self))

    def __add__(self, other: "SymTensor") -> "SymTensor":
        return SymTensor(self.entries + other.entries, self.dim)

    def __sub__(self, other: "SymTensor") -> "SymTensor":
        return SymTensor(self.entries - other.entries, self.dim)

    def __neg__(self) -> "SymTensor":
        return SymTensor(-self.entries, self.dim)

    def scale(self, s) -> "SymTensor":
        """Multiply every tensor of the batch by the (broadcast) scalar ``s``."""
        return SymTensor(np.asarray(s, dtype=float)[..., None] * self.entries, self.dim)

    __mul__ = scale
    __rmul__ = scale


@dataclass(frozen=True)
class MaterialParams:
    """Scalar constitutive constants.

    Defaults realise the normalisation rho* = 2 nu* = gamma* = K = q* = 1.
    ``epsilon`` is the regularisation scale (1/n) of the smoothed law.
    """

    rho_star: float = 1.0
    nu_star: float = 0.5
    q_star: float = 1.0
    K: float = 1.0
    s_star: float = 1.0
    gamma_star: float = 1.0
    epsilon: float = 1e-2

    def __post_init__(self):
        checks = {
            "rho_star": self.rho_star > 0,
            "nu_star": self.nu_star > 0,
            "q_star": self.q_star >= 0,
            "K": self.K >= 0,
            "s_star": self.s_star > 0,
            "gamma_star": self.gamma_star >= 0,
            "epsilon": self.epsilon > 0,
        }
        for name, ok in checks.items():
            value = getattr(self, name)
            if not (np.isfinite(value) and ok):
                raise ValueError(f"invalid material parameter {name} = {value!r}")


@dataclass(frozen=True)
class BoundaryVectors:
    """Tangential velocity, traction and shifted traction at wall points."""

    v_tau: np.ndarray
    s_vec: np.ndarray
    z_vec: np.ndarray

    @classmethod
    def from_traction(cls, v_tau, s_vec, gamma_star: float, normal=None, atol: float = 1e-12):
        v_tau = np.asarray(v_tau, dtype=float)
        s_vec = np.asarray(s_vec, dtype=float)
        if normal is not None:
            n = np.asarray(normal, dtype=float)
            for name, vec in (("v_tau", v_tau), ("s_vec", s_vec)):
                off = np.abs(np.sum(vec * n, axis=-1))
                scale = np.maximum(1.0, np.linalg.norm(vec, axis=-1))
                if np.any(off > atol * scale):
                    raise ValueError(f"{name} is not tangent to the wall")
        return cls(v_tau, s_vec, s_vec - gamma_star * v_tau)


def yield_stress(p_s_val, p_f_val, q_star):
    """Activated yield stress ``q* (p_s - p_f)^+``."""
    _require_finite(p_s_val, p_f_val, q_star)
    return q_star * np.maximum(np.asarray(p_s_val, dtype=float) - p_f_val, 0.0)


def stress_from_strain_exact(D: SymTensor, tau, nu_star) -> SymTensor:
    """Flowing branch ``S = tau D/|D| + 2 nu* D``; undefined at ``D = 0``."""
    _require_finite(D.entries, tau, nu_star)
    nD = D.norm()
    if np.any(nD == 0.0):
        raise ConstitutiveDomainError("rigid state: stress not uniquely determined")
    return D.scale(np.asarray(tau, dtype=float) / nD + 2.0 * nu_star)


def strain_from_stress_exact(S: SymTensor, tau, nu_star) -> SymTensor:
    """Inverse law ``2 nu* D = (|S| - tau)^+ / |S| * S``, zero at ``S = 0``."""
    _require_finite(S.entries, tau, nu_star)
    nS = S.norm()
    excess = np.maximum(nS - tau, 0.0)
    # ties |S| == tau land on the rigid branch since excess is then exactly 0
    with np.errstate(invalid="ignore", divide="ignore"):
        factor = np.where(excess > 0.0, excess / np.where(nS > 0, nS, 1.0), 0.0)
    return S.scale(factor / (2.0 * nu_star))


def regularized_stress_extra(D: SymTensor, p_s_val, p_f_val, params: MaterialParams, epsilon=None) -> SymTensor:
    """Smoothed plastic stress ``tau D / (|D| + eps)``.

    ``epsilon`` overrides ``params.epsilon`` and may be an array broadcasting
    against the batch.
    """
    eps = params.epsilon if epsilon is None else np.asarray(epsilon, dtype=float)
    tau = yield_stress(p_s_val, p_f_val, params.q_star)
    return D.scale(tau / (D.norm() + eps))


def check_scalar_constraints(S: SymTensor, D: SymTensor, tau, nu_star, tol=None):
    """Test ``|Z| <= tau`` and ``Z:D >= tau |D|`` with ``Z = S - 2 nu* D``.

    Returns ``(ok, (r1, r2))`` where ``r1 = |Z| - tau`` and
    ``r2 = tau |D| - Z:D``.  With ``tol=None`` each residual is compared
    against ``1e-10`` times its natural scale (``max(1, |S|, tau)``, times
    ``max(1, |D|)`` for ``r2``).
    """
    tau = np.asarray(tau, dtype=float)
    Z = S - D.scale(2.0 * nu_star)
    nD = D.norm()
    r1 = Z.norm() - tau
    r2 = tau * nD - Z.ddot(D)
    if tol is None:
        scale = np.maximum(np.maximum(1.0, S.norm()), tau)
        ok = (r1 <= 1e-10 * scale) & (r2 <= 1e-10 * scale * np.maximum(1.0, nD))
    else:
        ok = (r1 <= tol) & (r2 <= tol)
    return ok, (r1, r2)


def _vnorm(v):
    return np.linalg.norm(v, axis=-1)


def slip_traction_exact(v_tau, s_star, gamma_star):
    """Slipping branch ``s = s* v/|v| + gamma* v``; undefined when ``v = 0``."""
    v = np.asarray(v_tau, dtype=float)
    _require_finite(v, s_star, gamma_star)
    nv = _vnorm(v)
    if np.any(nv == 0.0):
        raise ConstitutiveDomainError("stick state: traction not uniquely determined")
    return v * (s_star / nv + gamma_star)[..., None]


def slip_velocity_exact(s_vec, s_star, gamma_star):
    """Inverse slip law ``gamma* v = (|s| - s*)^+ / |s| * s``."""
    s = np.asarray(s_vec, dtype=float)
    _require_finite(s, s_star, gamma_star)
    if np.any(np.asarray(gamma_star) == 0):
        raise ConstitutiveDomainError("gamma_star = 0: slip velocity not determined by the traction")
    ns = _vnorm(s)
    excess = np.maximum(ns - s_star, 0.0)
    with np.errstate(invalid="ignore", divide="ignore"):
        factor = np.where(excess > 0.0, excess / np.where(ns > 0, ns, 1.0), 0.0)
    return s * (factor / gamma_star)[..., None]


def regularized_slip_traction(v_tau, s_star, epsilon):
    """Smoothed stick-slip traction ``s* v / (|v| + eps)``."""
    v = np.asarray(v_tau, dtype=float)
    return v * (s_star / (_vnorm(v) + epsilon))[..., None]


def check_slip_constraints(s_vec, v_tau, s_star, gamma_star, tol=None):
    """Test ``|z| <= s*`` and ``z.v >= s* |v|`` with ``z = s - gamma* v``.

    Returns ``(ok, (r1, r2))``.  With ``tol=None`` the residuals are compared
    against ``1e-10 max(1, |s|, s*)``, times ``max(1, |v|)`` for ``r2``.
    """
    s = np.asarray(s_vec, dtype=float)
    v = np.asarray(v_tau, dtype=float)
    z = s - np.expand_dims(np.asarray(gamma_star, dtype=float), -1) * v
    nv = _vnorm(v)
    r1 = _vnorm(z) - s_star
    r2 = s_star * nv - np.sum(z * v, axis=-1)
    if tol is None:
        scale = np.maximum(np.maximum(1.0, _vnorm(s)), s_star)
        ok = (r1 <= 1e-10 * scale) & (r2 <= 1e-10 * scale * np.maximum(1.0, nv))
    else:
        ok = (r1 <= tol) & (r2 <= tol)
    return ok, (r1, r2)


def monotonicity_gap(D1: SymTensor, D2: SymTensor, p_s_val, p_f_val, params: MaterialParams, epsilon=None):
    """``(Z1 - Z2):(D1 - D2)`` minus its lower bound ``tau eps (|D1|-|D2|)^2 / ((|D1|+eps)(|D2|+eps))``.

    Both sides are evaluated directly from their definitions, so a negative
    value (beyond round-off) would falsify the inequality.
    """
    eps = params.epsilon if epsilon is None else np.asarray(epsilon, dtype=float)
    tau = yield_stress(p_s_val, p_f_val, params.q_star)
    Z1 = regularized_stress_extra(D1, p_s_val, p_f_val, params, epsilon=eps)
    Z2 = regularized_stress_extra(D2, p_s_val, p_f_val, params, epsilon=eps)
    lhs = (Z1 - Z2).ddot(D1 - D2)
    n1, n2 = D1.norm(), D2.norm()
    rhs = tau * eps * (n1 - n2) ** 2 / ((n1 + eps) * (n2 + eps))
    return lhs - rhs
