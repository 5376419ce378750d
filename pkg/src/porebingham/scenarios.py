"""Built-in test problems.

Every scenario turns a :class:`~.config.RunConfig` into a grid, initial
fields, forcing and (possibly adjusted) material parameters.  Unset forcing
knobs fall back to the per-scenario defaults listed in ``DEFAULTS``.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .config import RunConfig
from .constitutive import MaterialParams
from .grid import ScalarField, StaggeredGrid, VectorField
from .solver import ForcingSpec, Walls

__all__ = ["Setup", "DEFAULTS", "builtin_scenarios", "build_scenario", "channel_profile", "channel_plug_half_width"]


@dataclass
class Setup:
    grid: StaggeredGrid
    v0: VectorField
    p_f0: ScalarField
    forcing: ForcingSpec
    params: MaterialParams


DEFAULTS = {
    "rest": dict(wall="stickslip", body_force=0.0, p_s=0.0, p0=0.0, velocity_scale=0.0),
    "decay": dict(wall="stickslip", body_force=0.0, p_s=1.0, p0=0.5, velocity_scale=1.0),
    "newtonian_cavity": dict(wall="noslip", body_force=0.0, p_s=1.0, p0=0.5, velocity_scale=1.0),
    "bingham_channel": dict(wall="noslip", body_force=2.0, p_s=1.0, p0=0.5, velocity_scale=0.0),
    "activation_box": dict(wall="stickslip", body_force=0.8, p_s=2.0, p0=1.5, velocity_scale=0.0,
                           source_amplitude=40.0, source_radius=0.1),
    "manufactured_pf": dict(wall="stickslip", body_force=0.0, p_s=1.0, p0=0.0, velocity_scale=1.0),
    "stirred_pf": dict(wall="stickslip", body_force=20.0, p_s=0.5, p0=0.0, velocity_scale=0.0),
}


def builtin_scenarios():
    return list(DEFAULTS)


def _knob(cfg: RunConfig, name):
    v = getattr(cfg.forcing, name)
    return DEFAULTS[cfg.scenario].get(name) if v is None or (name == "wall" and v == "default") else v


def _box(cfg, periodic=None):
    gs = cfg.grid
    return StaggeredGrid.box(gs.n_cells, gs.lengths, periodic=periodic)


def _const(value):
    return lambda t, g: ScalarField.constant(g, value)



def _swirl(g: StaggeredGrid, scale):
    """Cellular swirl in the x-y plane, tangent to every wall."""
    Lx, Ly = g.lengths[0], g.lengths[1]

    def fn(*X):
        x = (X[0] - g.origin[0]) / Lx
        y = (X[1] - g.origin[1]) / Ly
        u = scale * np.sin(np.pi * x) ** 2 * np.sin(2 * np.pi * y)
        v = -scale * (Ly / Lx) * np.sin(2 * np.pi * x) * np.sin(np.pi * y) ** 2
        out = [u, v] + [0.0 * X[0]] * (g.dim - 2)
        return tuple(out)

    return VectorField.from_function(g, fn)


def _walls(model, velocity=None):
    return Walls(model, velocity or {})


def build_scenario(cfg: RunConfig) -> Setup:
    name = cfg.scenario
    if name not in DEFAULTS:
        raise KeyError(f"unknown scenario {name!r}; available: {', '.join(DEFAULTS)}")
    params = cfg.material
    wall = _knob(cfg, "wall")
    p_s, p0 = _knob(cfg, "p_s"), _knob(cfg, "p0")
    bmag, U = _knob(cfg, "body_force"), _knob(cfg, "velocity_scale")

    if name == "rest":
        g = _box(cfg)
        forcing = ForcingSpec(solid_pressure=_const(p_s), walls=_walls(wall))
        return Setup(g, VectorField.zeros(g), ScalarField.constant(g, p0), forcing, params)

    if name == "decay":
        g = _box(cfg)
        forcing = ForcingSpec(solid_pressure=_const(p_s), walls=_walls(wall))
        return Setup(g, _swirl(g, U), ScalarField.constant(g, p0), forcing, params)

    if name == "newtonian_cavity":
        g = _box(cfg)
        lid = np.zeros(g.dim)
        lid[0] = U
        forcing = ForcingSpec(solid_pressure=_const(p_s), walls=_walls(wall, {(1, 1): tuple(lid)}))
        return Setup(g, VectorField.zeros(g), ScalarField.constant(g, p0), forcing, replace(params, q_star=0.0))

    if name == "bingham_channel":
        # walls only across y; x (and z) wrap around
        g = _box(cfg, (True, False, True)[: cfg.grid.dim])

        def body(t, gr):
            return VectorField.from_function(gr, lambda *X: (bmag + 0.0 * X[0],) + (0.0 * X[0],) * (gr.dim - 1))

        forcing = ForcingSpec(body_force=body, solid_pressure=_const(p_s), walls=_walls(wall))
        return Setup(g, VectorField.zeros(g), ScalarField.constant(g, p0), forcing, params)

    if name == "activation_box":
        g = _box(cfg)
        amp, radius = _knob(cfg, "source_amplitude"), _knob(cfg, "source_radius")
        Ly = g.lengths[1]
        centre = [o + 0.5 * L for o, L in zip(g.origin, g.lengths)]

        def body(t, gr):
            return VectorField.from_function(
                gr, lambda *X: (bmag * np.cos(np.pi * (X[1] - gr.origin[1]) / Ly),) + (0.0 * X[0],) * (gr.dim - 1))

        def source(t, gr):
            r2 = sum((X - c) ** 2 for X, c in zip(gr.cell_centers(), centre))
            return ScalarField(gr, amp * np.exp(-r2 / radius ** 2))

        forcing = ForcingSpec(body_force=body, source=source, solid_pressure=_const(p_s), walls=_walls(wall))
        return Setup(g, VectorField.zeros(g), ScalarField.constant(g, p0), forcing, params)

    if name == "manufactured_pf":
        g = _box(cfg)
        Lx = g.lengths[0]
        X = g.cell_centers()[0]
        p_f0 = ScalarField(g, p0 + U * np.cos(np.pi * (X - g.origin[0]) / Lx))
        forcing = ForcingSpec(solid_pressure=_const(p_s), walls=_walls(wall))
        return Setup(g, VectorField.zeros(g), p_f0, forcing, params)

    # stirred_pf: random pore pressure advected by a forced swirl
    g = _box(cfg)
    rng = np.random.default_rng(cfg.forcing.seed)
    p_f0 = ScalarField(g, rng.uniform(0.0, 1.0, size=g.n_cells))

    def body(t, gr):
        return _swirl(gr, bmag)

    forcing = ForcingSpec(body_force=body, solid_pressure=_const(p_s), walls=_walls(wall))
    return Setup(g, VectorField.zeros(g), p_f0, forcing, params)


def channel_profile(y, height, G, tau, nu_star):
    """Steady Bingham velocity across a no-slip channel ``0 <= y <= height``.

    ``G`` is the driving force density (``rho* b``), ``tau`` the constant
    yield stress, Frobenius norm convention.  Symmetric about mid-height.
    """
    y = np.asarray(y, dtype=float)
    yc = channel_plug_half_width(G, tau, height)
    s = np.minimum(y, height - y)
    edge = 0.5 * height - yc
    sc = np.minimum(s, edge)
    return (G * (0.5 * height * sc - 0.5 * sc * sc) - tau * sc / np.sqrt(2.0)) / nu_star


def channel_plug_half_width(G, tau, height=None):
    """Half-width of the unyielded core, ``tau / (sqrt(2) |G|)``, capped at half the channel."""
    yc = tau / (np.sqrt(2.0) * abs(G)) if G != 0 else np.inf
    return yc if height is None else min(yc, 0.5 * height)
