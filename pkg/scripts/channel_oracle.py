"""Steady Bingham channel against the closed-form profile.

Prints plug half-width offsets and velocity errors over a grid of ``ny`` and
``epsilon`` values.  Usage: ``python3 scripts/channel_oracle.py [--ny 64 128]``.
"""

import argparse

import numpy as np

from porebingham.config import GridSpec, RunConfig
from porebingham.grid import sym_gradient
from porebingham.scenarios import build_scenario, channel_plug_half_width, channel_profile
from porebingham.solver import initial_state, step

H, TAU, NU = 1.0, 0.5, 0.5


def steady(ny, eps, G, dt=0.2, tol=1e-11, max_steps=3000):
    cfg = RunConfig(grid=GridSpec(dim=2, nx=2, ny=ny)).with_overrides(
        material=dict(epsilon=eps), forcing=dict(scenario="bingham_channel", body_force=G, p_s=1.0, p0=0.5),
        solver=dict(dt_initial=dt, end_time=1e9))
    s = build_scenario(cfg)
    st = initial_state(s.grid, s.v0, s.p_f0, s.forcing, s.params, cfg.solver)
    for _ in range(max_steps):
        nxt = step(st, s.forcing, s.params, cfg.solver, dt=dt)
        done = np.max(np.abs(nxt.v.flat() - st.v.flat())) < tol
        st = nxt
        if done:
            break
    return s, st


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--ny", type=int, nargs="+", default=[64, 128])
    ap.add_argument("--eps", type=float, nargs="+", default=[1e-2, 1e-3, 1e-4])
    ap.add_argument("--G", type=float, default=2.0)
    args = ap.parse_args()
    yc = channel_plug_half_width(args.G, TAU, H)
    calm_G = 0.5 * np.sqrt(2.0) * TAU / H
    print(f"analytic half-width {yc:.5f}")
    print(f"{'ny':>5} {'eps':>8} {'L2 error':>10} {'floor':>10} {'offset(cells)':>14}")
    for ny in args.ny:
        h = H / ny
        for eps in args.eps:
            s, st = steady(ny, eps, args.G)
            y = s.grid.axis_coords(1, False)
            err = np.sqrt(np.mean((st.v.components[0][0] - channel_profile(y, H, args.G, TAU, NU)) ** 2))
            _, calm = steady(ny, eps, calm_G)
            floor = sym_gradient(calm.v, calm.wall_velocity).to_cells().norm().max()
            nD = sym_gradient(st.v, st.wall_velocity).to_cells().norm()[0]
            half = 0.5 * h * np.sum(nD < 10 * floor)
            print(f"{ny:5d} {eps:8.1e} {err:10.3e} {floor:10.3e} {(half - yc) / h:+14.2f}")


if __name__ == "__main__":
    main()
