"""Acceptance criteria 1-11, one PASS/FAIL line each.

Run with ``pytest tests/test_acceptance.py`` (lines appear in the terminal
summary) or directly with ``python3 tests/test_acceptance.py``.
"""

import filecmp
import os
import sys
import time

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

from newtonian_reference import NewtonianReference  # noqa: E402

from porebingham.cli import main, simulate  # noqa: E402
from porebingham.config import GridSpec, RunConfig  # noqa: E402
from porebingham.constitutive import (  # noqa: E402
    MaterialParams,
    SymTensor,
    check_scalar_constraints,
    check_slip_constraints,
    monotonicity_gap,
    regularized_stress_extra,
    slip_traction_exact,
    slip_velocity_exact,
    strain_from_stress_exact,
    stress_from_strain_exact,
)
from porebingham.grid import sym_gradient  # noqa: E402
from porebingham.scenarios import build_scenario, channel_plug_half_width, channel_profile  # noqa: E402
from porebingham.solver import initial_state, step  # noqa: E402

RESULTS = []


def record(number, ok, detail, started):
    line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}  ({time.perf_counter() - started:.1f} s)"
    RESULTS.append(line)
    print(line)
    return ok


def sym_batch(rng, n, scale=1.0):
    return SymTensor(scale * rng.standard_normal((n, 6)), dim=3)


def cfg_for(name, n, dim=2, **over):
    forcing = dict(scenario=name, **over.pop("forcing", {}))
    solver = dict(end_time=1e9, **over.pop("solver", {}))
    return RunConfig(grid=GridSpec(dim=dim, nx=n, ny=n, nz=n)).with_overrides(forcing=forcing, solver=solver, **over)


# --- 1-4: pointwise laws ------------------------------------------------------


def test_01_constitutive_equivalence():
    t0 = time.perf_counter()
    rng = np.random.default_rng(101)
    n = 100_000
    worst = 0.0
    # strain -> stress -> strain on the flowing branch
    D = sym_batch(rng, n, np.exp(rng.uniform(-3, 3, (n, 1))))
    tau = rng.uniform(0, 5, n)
    nu = rng.uniform(0.05, 5, n)
    S = stress_from_strain_exact(D, tau, nu)
    D2 = strain_from_stress_exact(S, tau, nu)
    worst = max(worst, np.max(np.abs(D2.entries - D.entries).max(axis=-1) / D.norm()))
    _, (r1, r2) = check_scalar_constraints(S, D, tau, nu, tol=0.0)
    sc = np.maximum(S.norm(), tau)
    worst = max(worst, np.max(np.abs(r1) / sc), np.max(np.abs(r2) / (sc * D.norm())))
    # stress -> strain -> stress, both branches
    S = sym_batch(rng, n, np.exp(rng.uniform(-3, 3, (n, 1))))
    tau = S.norm() * rng.uniform(0, 2, n)
    D = strain_from_stress_exact(S, tau, nu)
    flowing = D.norm() > 0
    assert np.array_equal(flowing, S.norm() > tau)
    Sf = SymTensor(S.entries[flowing], 3)
    back = stress_from_strain_exact(SymTensor(D.entries[flowing], 3), tau[flowing], nu[flowing])
    worst = max(worst, np.max(np.abs(back.entries - Sf.entries).max(axis=-1) / Sf.norm()))
    _, (r1, r2) = check_scalar_constraints(S, D, tau, nu, tol=0.0)
    sc = np.maximum(S.norm(), tau)
    viol = max(np.max(r1 / sc), np.max(r2 / (sc * np.maximum(D.norm(), 1e-300))))
    worst = max(worst, viol)
    ok = worst <= 1e-12 and time.perf_counter() - t0 < 5
    assert record(1, ok, f"worst relative residual {worst:.2e} over 2x{n} samples", t0)


def test_02_boundary_equivalence():
    t0 = time.perf_counter()
    rng = np.random.default_rng(202)
    n = 100_000
    s_star = rng.uniform(0.01, 5, n)
    gamma = rng.uniform(0.01, 5, n)
    worst = 0.0
    v = rng.standard_normal((n, 3)) * np.exp(rng.uniform(-3, 3, (n, 1)))
    s = slip_traction_exact(v, s_star, gamma)
    v2 = slip_velocity_exact(s, s_star, gamma)
    nv = np.linalg.norm(v, axis=-1)
    worst = max(worst, np.max(np.abs(v2 - v).max(axis=-1) / nv))
    _, (r1, r2) = check_slip_constraints(s, v, s_star, gamma, tol=0.0)
    sc = np.maximum(np.linalg.norm(s, axis=-1), s_star)
    worst = max(worst, np.max(np.abs(r1) / sc), np.max(np.abs(r2) / (sc * nv)))
    s = rng.standard_normal((n, 3))
    s *= (s_star * rng.uniform(0, 2, n) / np.linalg.norm(s, axis=-1))[:, None]
    v = slip_velocity_exact(s, s_star, gamma)
    nv = np.linalg.norm(v, axis=-1)
    sliding = nv > 0
    assert np.array_equal(sliding, np.linalg.norm(s, axis=-1) > s_star)
    back = slip_traction_exact(v[sliding], s_star[sliding], gamma[sliding])
    worst = max(worst, np.max(np.abs(back - s[sliding]).max(axis=-1) / np.linalg.norm(s[sliding], axis=-1)))
    _, (r1, r2) = check_slip_constraints(s, v, s_star, gamma, tol=0.0)
    sc = np.maximum(np.linalg.norm(s, axis=-1), s_star)
    worst = max(worst, np.max(r1 / sc), np.max(r2 / (sc * np.maximum(nv, 1e-300))))
    ok = worst <= 1e-12 and time.perf_counter() - t0 < 5
    assert record(2, ok, f"worst relative residual {worst:.2e} over 2x{n} samples", t0)


def test_03_monotonicity_sweep():
    t0 = time.perf_counter()
    rng = np.random.default_rng(303)
    n, chunk = 1_000_000, 100_000
    low = np.inf
    for _ in range(n // chunk):
        D1 = sym_batch(rng, chunk, np.exp(rng.uniform(-4, 2, (chunk, 1))))
        # half the pairs are close neighbours, where cancellation is worst
        near = rng.random(chunk) < 0.5
        D2e = np.where(near[:, None], D1.entries + 1e-3 * rng.standard_normal((chunk, 6)),
                       rng.standard_normal((chunk, 6)) * np.exp(rng.uniform(-4, 2, (chunk, 1))))
        p_s = rng.uniform(0, 3, chunk)
        p_f = rng.uniform(0, 3, chunk)
        eps = 10.0 ** rng.uniform(-4, 0, chunk)
        gap = monotonicity_gap(D1, SymTensor(D2e, 3), p_s, p_f, MaterialParams(), epsilon=eps)
        low = min(low, float(gap.min()))
    ok = low >= -1e-13 and time.perf_counter() - t0 < 30
    assert record(3, ok, f"min(lhs - rhs) = {low:.2e} over {n} pairs", t0)


def test_04_regularization_consistency():
    t0 = time.perf_counter()
    rng = np.random.default_rng(404)
    n = 1000
    # |D| in [1, 10]: the successive-error ratio 10 (|D| + eps/10)/(|D| + eps) only reaches 9 once |D| >= 8 eps
    D = sym_batch(rng, n)
    D = D.scale(rng.uniform(1, 10, n) / D.norm())
    tau = rng.uniform(0.1, 2, n)
    params = MaterialParams()
    errs, worst = [], 0.0
    for eps in (1e-1, 1e-2, 1e-3):
        Z = regularized_stress_extra(D, tau, 0.0, params, epsilon=eps)
        e = (Z - D.scale(tau / D.norm())).norm()
        worst = max(worst, float(np.max(np.abs(e - tau * eps / (D.norm() + eps)))))
        errs.append(e)
    ratios = np.concatenate([errs[0] / errs[1], errs[1] / errs[2]])
    ok = worst <= 1e-14 and ratios.min() >= 9.0 and ratios.max() <= 11.0
    assert record(4, ok, f"closed-form mismatch {worst:.1e}; error ratios in [{ratios.min():.3f}, {ratios.max():.3f}]",
                  t0)


# --- 5-7, 9, 11: full runs -----------------------------------------------------


def test_05_energy_decay():
    t0 = time.perf_counter()
    res = simulate(cfg_for("decay", 32, solver=dict(max_steps=500)))
    reps = res.reports
    E = np.array([r.kinetic_energy for r in reps])
    E0 = E[0]
    rise = float(np.max(np.diff(E)))
    resid = max(abs(r.energy_residual) for r in reps[1:])
    ok = (res.error is None and len(reps) == 501 and rise <= 0.0 and resid <= 1e-8 * E0
          and time.perf_counter() - t0 < 60)
    assert record(5, ok, f"max step change of E {rise:.2e}, max |residual|/E0 {resid / E0:.2e}", t0)


def test_06_incompressibility_3d():
    t0 = time.perf_counter()
    res = simulate(cfg_for("activation_box", 16, dim=3, solver=dict(max_steps=100)))
    worst = max(r.div_residual_inf for r in res.reports)
    ok = res.error is None and len(res.reports) == 101 and worst <= 1e-10 and time.perf_counter() - t0 < 120
    # the other scenarios, briefly
    others = []
    for name in ("rest", "decay", "newtonian_cavity", "bingham_channel", "manufactured_pf", "stirred_pf"):
        r = simulate(cfg_for(name, 12, solver=dict(max_steps=20)))
        others.append(max(x.div_residual_inf for x in r.reports))
        ok = ok and r.error is None
    ok = ok and max(others) <= 1e-10
    assert record(6, ok, f"max div 3D {worst:.2e}; other scenarios {max(others):.2e}", t0)


def test_07_pore_pressure_bounds():
    t0 = time.perf_counter()
    res = simulate(cfg_for("stirred_pf", 32, solver=dict(max_steps=500)))
    lo = np.array([r.pf_min for r in res.reports])
    hi = np.array([r.pf_max for r in res.reports])
    grow = float(np.max(np.diff(hi)))
    shrink = float(np.max(-np.diff(lo)))
    speed = res.state.v.max_abs()
    ok = (res.error is None and len(res.reports) == 501 and 0 <= lo[0] and hi[0] <= 1 and speed > 0.1
          and grow <= 1e-12 and shrink <= 1e-12)
    assert record(7, ok, f"max rise of max(p_f) {grow:.2e}, max drop of min(p_f) {shrink:.2e}, |v| {speed:.2f}", t0)


def test_09_newtonian_reduction():
    t0 = time.perf_counter()
    us = []
    res = simulate(cfg_for("newtonian_cavity", 32, solver=dict(max_steps=200)),
                   on_step=lambda prev, nxt, rep: us.append((nxt.v.flat().copy(), nxt.record)))
    s = res.setup
    assert s.params.q_star == 0.0
    ref = NewtonianReference(s.grid, s.params.nu_star, s.params.rho_star, s.forcing.walls.velocity)
    u, err = us[0][0], 0.0
    for v, rec in us[1:]:
        u = ref.step(u, rec.dt)
        err = max(err, float(np.max(np.abs(u - v))))
    ok = res.error is None and len(us) == 201 and err <= 1e-8
    assert record(9, ok, f"max |v - v_ref| {err:.2e} over 200 steps (lid speed 1)", t0)


def test_11_determinism(tmp_path):
    t0 = time.perf_counter()
    cfg = tmp_path / "box.cfg"
    cfg.write_text("[forcing]\nscenario = activation_box\n")
    codes = [main(["--config", str(cfg), "--output", str(tmp_path / name)]) for name in ("a", "b")]
    same = filecmp.cmp(tmp_path / "a" / "diagnostics.csv", tmp_path / "b" / "diagnostics.csv", shallow=False)
    rows = len((tmp_path / "a" / "diagnostics.csv").read_text().splitlines()) - 1
    ok = codes == [0, 0] and same and rows > 1
    assert record(11, ok, f"{rows} rows, byte-identical: {same}", t0)


# --- 8, 10: channel oracles ------------------------------------------------------

H, TAU, NU = 1.0, 0.5, 0.5  # p_s - p_f = 0.5 with q* = 1; nu* default
G_CRIT = np.sqrt(2.0) * TAU / H  # wall stress first reaches the yield stress


def steady_channel(ny, eps, G, dt=0.2, tol=1e-11, max_steps=3000):
    cfg = RunConfig(grid=GridSpec(dim=2, nx=2, ny=ny)).with_overrides(
        material=dict(epsilon=eps), forcing=dict(scenario="bingham_channel", body_force=G, p_s=1.0, p0=0.5),
        solver=dict(dt_initial=dt, end_time=1e9))
    s = build_scenario(cfg)
    st = initial_state(s.grid, s.v0, s.p_f0, s.forcing, s.params, cfg.solver)
    for _ in range(max_steps):
        nxt = step(st, s.forcing, s.params, cfg.solver, dt=dt)
        change = float(np.max(np.abs(nxt.v.flat() - st.v.flat())))
        st = nxt
        if change < tol:
            break
    return s, st


def strain_profile(st):
    return sym_gradient(st.v, st.wall_velocity).to_cells().norm()[0]


def test_08_bingham_channel():
    t0 = time.perf_counter()
    G = 2.0
    yc = channel_plug_half_width(G, TAU, H)
    offsets = {}
    for ny in (64, 128):
        eps = 1e-3
        s, st = steady_channel(ny, eps, G)
        _, calm = steady_channel(ny, eps, 0.5 * G_CRIT)
        floor = float(np.max(strain_profile(calm)))
        h = H / ny
        half = 0.5 * h * np.sum(strain_profile(st) < 10.0 * floor)
        offsets[ny] = ((half - yc) / h, (half - TAU / G) / h)
    errs = []
    ny = 128
    y = None
    for eps in (1e-2, 1e-3):
        s, st = steady_channel(ny, eps, G)
        y = s.grid.axis_coords(1, False)
        u = st.v.components[0][0]
        errs.append(float(np.sqrt(np.mean((u - channel_profile(y, H, G, TAU, NU)) ** 2))))
    factor = errs[0] / errs[1]
    width_ok = all(abs(o[0]) <= 1.0 for o in offsets.values())
    ok = width_ok and 1.5 <= factor <= 2.5 and time.perf_counter() - t0 < 120
    detail = (f"plug half-width offset {offsets[64][0]:+.2f} cells (ny=64), {offsets[128][0]:+.2f} cells (ny=128) "
              f"vs y_c = tau/(sqrt2 |G|) = {yc:.4f} [vs tau/|G|: {offsets[64][1]:+.1f}, {offsets[128][1]:+.1f}]; L2 error {errs[0]:.2e} -> {errs[1]:.2e}, factor {factor:.2f} (window [1.5, 2.5])")
    assert record(8, ok, detail, t0)


def test_10_creep_floor_scaling():
    t0 = time.perf_counter()
    G = 0.5 * G_CRIT
    assert abs(G) * H / 2 < TAU
    speeds = []
    for eps in (1e-2, 5e-3, 2.5e-3, 1.25e-3):
        _, st = steady_channel(64, eps, G)
        speeds.append(st.v.max_abs())
    factors = [a / b for a, b in zip(speeds, speeds[1:])]
    ok = all(1.6 <= f <= 2.4 for f in factors)
    assert record(10, ok, "speed ratios per halving " + ", ".join(f"{f:.3f}" for f in factors), t0)


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q", "-p", "no:cacheprovider"]))
