"""Per-step measurements: energy budget, constraint residuals, plug region."""

from __future__ import annotations

from dataclasses import dataclass, fields
from typing import Optional

import numpy as np

from .constitutive import (
    MaterialParams,
    SymTensor,
    check_scalar_constraints,
    check_slip_constraints,
    regularized_slip_traction,
    yield_stress,
)
from .grid import ScalarField, sym_gradient
from .solver import ForcingSpec, SimulationState, _slip_magnitude, _wall_velocity_vectors

__all__ = [
    "StepReport",
    "BudgetTerms",
    "ResidualFields",
    "kinetic_energy",
    "energy_budget",
    "constraint_residual_fields",
    "plug_region",
    "step_report",
    "initial_report",
    "default_plug_threshold",
]


@dataclass
class StepReport:
    """One diagnostics row.  Field order is the CSV column order.

    The ``max_r*`` columns report violations: the largest residual clipped
    at zero, so a row with every constraint satisfied shows 0.
    """

    t: float
    kinetic_energy: float
    viscous_dissipation: float
    plastic_dissipation: float
    wall_dissipation: float
    energy_residual: float
    div_residual_inf: float
    pf_min: float
    pf_max: float
    max_r1_bulk: float
    max_r2_bulk: float
    max_r1_wall: float
    max_r2_wall: float
    plug_fraction: float

    @classmethod
    def columns(cls):
        return [f.name for f in fields(cls)]

    def values(self):
        return [getattr(self, name) for name in self.columns()]


@dataclass
class BudgetTerms:
    """Energy bookkeeping of one step.

    Rates (``*_dissipation``, ``forcing_power``, ``wall_work``) are in watts;
    ``numerical_dissipation`` and ``residual`` in joules.  ``residual`` is

        E_new - E_old + numerical_dissipation
        + dt (viscous + plastic + wall - forcing_power - wall_work)

    which vanishes up to round-off for the scheme in :mod:`.solver`.
    """

    kinetic_energy: float
    viscous_dissipation: float
    plastic_dissipation: float
    wall_dissipation: float
    forcing_power: float
    wall_work: float
    numerical_dissipation: float
    residual: float
    scale: float


@dataclass
class ResidualFields:
    r1: ScalarField
    r2: ScalarField
    wall_r1: np.ndarray
    wall_r2: np.ndarray
    tau: ScalarField

    @property
    def max_r1_bulk(self):
        return float(np.max(self.r1.values))

    @property
    def max_r2_bulk(self):
        return float(np.max(self.r2.values))

    @property
    def max_r1_wall(self):
        return float(np.max(self.wall_r1)) if self.wall_r1.size else 0.0

    @property
    def max_r2_wall(self):
        return float(np.max(self.wall_r2)) if self.wall_r2.size else 0.0


def kinetic_energy(state: SimulationState, params: MaterialParams) -> float:
    u = state.v.flat()
    return 0.5 * params.rho_star * state.grid.cell_volume * float(u @ u)


def energy_budget(prev: SimulationState, nxt: SimulationState, forcing: ForcingSpec,
                  params: MaterialParams, dt: Optional[float] = None) -> BudgetTerms:
    """Budget terms of the step ``prev -> nxt`` from the quantities the solver used."""
    rec = nxt.record
    if rec is None:
        raise ValueError("state carries no step record")
    if dt is not None and not np.isclose(dt, rec.dt, rtol=1e-14, atol=0.0):
        raise ValueError(f"dt {dt!r} does not match the recorded step {rec.dt!r}")
    dt = rec.dt
    g = nxt.grid
    rho, V = params.rho_star, g.cell_volume
    u_old, u_star, u_new = prev.v.flat(), rec.v_star, nxt.v.flat()
    cl = rec.closure

    D = g.strain_matrix @ u_star + g.wall_strain_matrix @ rec.wall_velocity_star
    quad = g.site_multiplicity * g.site_volume * D * D
    viscous = 2.0 * params.nu_star * float(np.sum(quad))
    plastic = float(np.sum((rec.site_weight - 2.0 * params.nu_star) * quad))
    ws = g.wall_sites
    if cl.noslip or len(ws) == 0:
        wall = 0.0
    else:
        slip = rec.wall_velocity_star - cl.U
        wall = float(np.sum(cl.r * cl.area * slip * slip))
    wall_work = -float(np.sum(cl.c * cl.U * (u_star[ws.face] - cl.U)))
    power = rho * V * float(rec.body_force @ u_star)

    d1, d2 = u_star - u_old, u_star - u_new
    numerical = 0.5 * rho * V * float(d1 @ d1 + d2 @ d2)
    e_old = kinetic_energy(prev, params)
    e_new = kinetic_energy(nxt, params)
    residual = e_new - e_old + numerical + dt * (viscous + plastic + wall - power - wall_work)
    scale = max(e_old, dt * rho * V * float(np.linalg.norm(rec.body_force) * np.linalg.norm(u_star)),
                dt * abs(wall_work))
    return BudgetTerms(e_new, viscous, plastic, wall, power, wall_work, numerical, residual, scale)


def constraint_residual_fields(state: SimulationState, forcing: ForcingSpec, params: MaterialParams,
                               Z=None) -> ResidualFields:
    """Pointwise residuals of ``|Z| <= tau`` / ``Z:D >= tau|D|`` at cells and of the slip law on walls.

    ``Z`` overrides the cached extra stress (cell layout), e.g. to probe the
    detector with an inconsistent field.
    """
    g = state.grid
    Dc = sym_gradient(state.v, state.wall_velocity).to_cells()
    Zc = (state.Z if Z is None else Z).to_cells()
    D = SymTensor(Dc.entries(), dim=g.dim)
    Zt = SymTensor(Zc.entries(), dim=g.dim)
    S = D.scale(2.0 * params.nu_star) + Zt
    tau = yield_stress(forcing.solid_pressure(state.t, g).values, state.p_f.values, params.q_star)
    _, (r1, r2) = check_scalar_constraints(S, D, tau, params.nu_star, tol=0.0)

    ws = g.wall_sites
    if forcing.walls.model == "noslip" or len(ws) == 0 or state.wall_velocity is None:
        empty = np.zeros(0)
        w1, w2 = empty, empty
    else:
        rel = state.wall_velocity - _wall_velocity_vectors(g, forcing.walls)
        mag = _slip_magnitude(g, rel)
        # tangent vector in a local frame: this component, then the rest of the magnitude
        v = np.stack([rel, np.sqrt(np.maximum(mag * mag - rel * rel, 0.0))], axis=-1)
        s = regularized_slip_traction(v, params.s_star, params.epsilon) + params.gamma_star * v
        _, (w1, w2) = check_slip_constraints(s, v, params.s_star, params.gamma_star, tol=0.0)
    return ResidualFields(ScalarField(g, r1), ScalarField(g, r2), np.asarray(w1), np.asarray(w2),
                          ScalarField(g, tau))


def default_plug_threshold(params: MaterialParams) -> float:
    """Ten times the regularisation scale, in strain-rate units."""
    return 10.0 * params.epsilon


def plug_region(state: SimulationState, threshold: float):
    """Cells whose strain-rate norm is below ``threshold``; returns ``(mask, fraction)``."""
    if not threshold > 0:
        raise ValueError(f"plug threshold must be positive, got {threshold!r}")
    nD = sym_gradient(state.v, state.wall_velocity).to_cells().norm()
    mask = nD < threshold
    return mask, float(np.mean(mask))


def _violations(res):
    return tuple(max(0.0, r) for r in (res.max_r1_bulk, res.max_r2_bulk, res.max_r1_wall, res.max_r2_wall))


def _common(state, forcing, params, threshold):
    res = constraint_residual_fields(state, forcing, params)
    g = state.grid
    div = float(np.max(np.abs(g.divergence_matrix @ state.v.flat())))
    _, frac = plug_region(state, threshold)
    return res, div, frac


def initial_report(state: SimulationState, forcing: ForcingSpec, params: MaterialParams,
                   threshold: Optional[float] = None) -> StepReport:
    """Row for the initial state: no step has been taken, so budget terms are zero."""
    threshold = default_plug_threshold(params) if threshold is None else threshold
    res, div, frac = _common(state, forcing, params, threshold)
    return StepReport(state.t, kinetic_energy(state, params), 0.0, 0.0, 0.0, 0.0, div,
                      float(state.p_f.values.min()), float(state.p_f.values.max()),
                      *_violations(res), frac)


def step_report(prev: SimulationState, nxt: SimulationState, forcing: ForcingSpec, params: MaterialParams,
                threshold: Optional[float] = None) -> StepReport:
    threshold = default_plug_threshold(params) if threshold is None else threshold
    b = energy_budget(prev, nxt, forcing, params)
    res, div, frac = _common(nxt, forcing, params, threshold)
    rep = StepReport(nxt.t, b.kinetic_energy, b.viscous_dissipation, b.plastic_dissipation, b.wall_dissipation,
                     b.residual, div, float(nxt.p_f.values.min()), float(nxt.p_f.values.max()),
                     *_violations(res), frac)
    rep.budget = b
    return rep
