"""Command-line front end: ``simulate --config PATH``.

Exit status 0 on success, 1 for configuration errors, 2 when the solver
fails (the message names the failing step).
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, List, Optional

import numpy as np
from threadpoolctl import threadpool_limits

from .config import ConfigError, RunConfig, load_config
from .diagnostics import StepReport, default_plug_threshold, initial_report, plug_region, step_report
from .grid import PoissonError, interpolate, sym_gradient
from .scenarios import Setup, build_scenario, builtin_scenarios
from .solver import SimulationState, SolverError, choose_dt, initial_state, step

__all__ = ["RunResult", "simulate", "run", "main", "write_snapshot", "read_snapshot", "format_row"]

log = logging.getLogger(__name__)

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER = 0, 1, 2


@dataclass
class RunResult:
    setup: Setup
    reports: List[StepReport] = field(default_factory=list)
    state: Optional[SimulationState] = None
    error: Optional[str] = None


def _fmt(x):
    return format(float(x), ".17g")


def format_row(report: StepReport) -> str:
    return ",".join(_fmt(v) for v in report.values())


def _plug_threshold(cfg: RunConfig, setup: Setup):
    t = cfg.output.plug_threshold
    return default_plug_threshold(setup.params) if t is None else t


def simulate(cfg: RunConfig, on_step: Optional[Callable] = None, setup: Optional[Setup] = None) -> RunResult:
    """Run ``cfg`` in memory.

    ``on_step(prev, nxt, report)`` is called for the initial state (with
    ``prev=None``) and after each accepted step.  Solver failures are caught
    and stored in ``RunResult.error``.
    """
    setup = build_scenario(cfg) if setup is None else setup
    scfg = cfg.solver
    threshold = _plug_threshold(cfg, setup)
    try:
        state = initial_state(setup.grid, setup.v0, setup.p_f0, setup.forcing, setup.params, scfg)
    except PoissonError as exc:
        return RunResult(setup, error=str(SolverError(f"initial projection failed: {exc}", 0)))
    result = RunResult(setup, [initial_report(state, setup.forcing, setup.params, threshold)], state)
    if on_step is not None:
        on_step(None, state, result.reports[0])
    end = scfg.end_time
    while end - state.t > 1e-12 * end:
        if scfg.max_steps and state.step_index >= scfg.max_steps:
            break
        dt = min(choose_dt(state, scfg), end - state.t)
        try:
            nxt = step(state, setup.forcing, setup.params, scfg, dt=dt)
        except SolverError as exc:
            result.error = str(exc)
            break
        rep = step_report(state, nxt, setup.forcing, setup.params, threshold)
        result.reports.append(rep)
        if on_step is not None:
            on_step(state, nxt, rep)
        state = nxt
        result.state = state
    return result


def _cell_velocity(state: SimulationState):
    g = state.grid
    cells = (False,) * g.dim
    return [interpolate(g, c, g.face_stagger(a), cells) for a, c in enumerate(state.v.components)]


def write_snapshot(path, state: SimulationState, threshold: float):
    """Header ``DIM NX NY NZ HX HY HZ T`` (values), then one row per cell, x fastest.

    Columns: cell-centre coordinates, cell velocity, p, p_f, |D|, |Z|, plug mask.
    """
    g = state.grid
    n = list(g.n_cells) + [1] * (3 - g.dim)
    h = list(g.spacing) + [0.0] * (3 - g.dim)
    cols = list(g.cell_centers()) + _cell_velocity(state)
    cols += [state.p.values, state.p_f.values,
             sym_gradient(state.v, state.wall_velocity).to_cells().norm(), state.Z.to_cells().norm()]
    mask, _ = plug_region(state, threshold)
    cols.append(mask.astype(float))
    # arrays are indexed [x, y(, z)]; Fortran order puts x fastest
    table = np.stack([np.asarray(c, dtype=float).ravel(order="F") for c in cols], axis=1)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(" ".join([str(g.dim)] + [str(v) for v in n] + [_fmt(v) for v in h] + [_fmt(state.t)]) + "\n")
        for row in table:
            fh.write(" ".join(_fmt(v) for v in row) + "\n")


def read_snapshot(path):
    """Return ``(header dict, table)`` from a snapshot file."""
    with open(path, encoding="utf-8") as fh:
        head = fh.readline().split()
        table = np.loadtxt(fh, ndmin=2)
    keys = ("dim", "nx", "ny", "nz", "hx", "hy", "hz", "t")
    header = {k: (int(v) if i < 4 else float(v)) for i, (k, v) in enumerate(zip(keys, head))}
    return header, table


def _summary(result: RunResult, cfg: RunConfig) -> str:
    reps = result.reports
    st = result.state
    lines = [f"scenario = {cfg.scenario}", f"status = {'failed' if result.error else 'ok'}"]
    if result.error:
        lines.append(f"error = {result.error}")
    lines += [f"steps = {st.step_index}", f"final_time = {_fmt(st.t)}"]
    stats = {
        "max_div_residual_inf": max(r.div_residual_inf for r in reps),
        "max_abs_energy_residual": max(abs(r.energy_residual) for r in reps),
        "max_r1_bulk": max(r.max_r1_bulk for r in reps),
        "max_r2_bulk": max(r.max_r2_bulk for r in reps),
        "max_r1_wall": max(r.max_r1_wall for r in reps),
        "max_r2_wall": max(r.max_r2_wall for r in reps),
        "min_pf": min(r.pf_min for r in reps),
        "max_pf": max(r.pf_max for r in reps),
        "min_plug_fraction": min(r.plug_fraction for r in reps),
        "max_plug_fraction": max(r.plug_fraction for r in reps),
    }
    lines += [f"{k} = {_fmt(v)}" for k, v in stats.items()]
    return "\n".join(lines) + "\n"


def run(cfg: RunConfig) -> int:
    """Execute ``cfg`` and write diagnostics.csv, snapshots and summary.txt."""
    out = Path(cfg.output.directory)
    out.mkdir(parents=True, exist_ok=True)
    setup = build_scenario(cfg)
    threshold = _plug_threshold(cfg, setup)
    every = cfg.output.snapshot_every

    with open(out / "diagnostics.csv", "w", encoding="utf-8", newline="\n") as csv:
        csv.write(",".join(StepReport.columns()) + "\n")

        def on_step(prev, nxt, rep):
            csv.write(format_row(rep) + "\n")
            if every and prev is not None and nxt.step_index % every == 0:
                write_snapshot(out / f"snapshot_{nxt.step_index:06d}.dat", nxt, threshold)

        result = simulate(cfg, on_step, setup)

    final = result.state
    if final is None:
        (out / "summary.txt").write_text(
            f"scenario = {cfg.scenario}\nstatus = failed\nerror = {result.error}\nsteps = 0\n", encoding="utf-8")
        print(f"solver failure: {result.error}", file=sys.stderr)
        return EXIT_SOLVER
    if not (every and final.step_index > 0 and final.step_index % every == 0):
        write_snapshot(out / f"snapshot_{final.step_index:06d}.dat", final, threshold)
    (out / "summary.txt").write_text(_summary(result, cfg), encoding="utf-8")
    if result.error:
        print(f"solver failure: {result.error}", file=sys.stderr)
        return EXIT_SOLVER
    return EXIT_OK


def _threads():
    raw = os.environ.get("SIM_THREADS")
    if raw is None or raw.strip() == "":
        return 1
    n = int(raw)
    if n < 1:
        raise ValueError
    return n


def _parser():
    p = argparse.ArgumentParser(prog="simulate", description="Pore-pressure-activated Bingham flow simulator.")
    p.add_argument("--config", type=Path, help="configuration file")
    p.add_argument("--output", help="output directory (overrides output.directory)")
    p.add_argument("--scenario", help="scenario name (overrides forcing.scenario)")
    p.add_argument("--steps", type=int, help="maximum number of steps (overrides solver.max_steps)")
    p.add_argument("--epsilon", type=float, help="regularisation scale (overrides material.epsilon)")
    p.add_argument("--list-scenarios", action="store_true", help="print the built-in scenarios and exit")
    return p


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    if args.list_scenarios:
        print("\n".join(builtin_scenarios()))
        return EXIT_OK
    if args.config is None:
        print("error: --config is required", file=sys.stderr)
        return EXIT_CONFIG
    try:
        cfg = load_config(args.config)
        over = {}
        if args.output is not None:
            over["output"] = {"directory": args.output}
        if args.scenario is not None:
            if args.scenario not in builtin_scenarios():
                raise ConfigError(f"unknown scenario {args.scenario!r}; available: {', '.join(builtin_scenarios())}")
            over["forcing"] = {"scenario": args.scenario}
        if args.steps is not None:
            over["solver"] = {"max_steps": args.steps}
        if args.epsilon is not None:
            over["material"] = {"epsilon": args.epsilon}
        cfg = cfg.with_overrides(**over)
        if cfg.scenario not in builtin_scenarios():
            raise ConfigError(f"unknown scenario {cfg.scenario!r}; available: {', '.join(builtin_scenarios())}")
        threads = _threads()
    except OSError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ValueError:
        print(f"config error: SIM_THREADS must be a positive integer, got {os.environ.get('SIM_THREADS')!r}",
              file=sys.stderr)
        return EXIT_CONFIG
    with threadpool_limits(limits=threads):
        try:
            return run(cfg)
        except OSError as exc:
            print(f"output error: {exc}", file=sys.stderr)
            return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
