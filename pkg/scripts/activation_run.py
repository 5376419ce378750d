"""Run the activation box through the CLI and summarise onset and yielding.

Usage: ``python3 scripts/activation_run.py OUTDIR [--n 32]``.
"""

import argparse
import csv
import sys
from pathlib import Path

import numpy as np

from porebingham.cli import main as simulate_main


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("outdir", type=Path)
    ap.add_argument("--n", type=int, default=32)
    args = ap.parse_args()
    args.outdir.mkdir(parents=True, exist_ok=True)
    cfg = args.outdir / "activation.cfg"
    cfg.write_text(f"[grid]\nnx = {args.n}\nny = {args.n}\n[forcing]\nscenario = activation_box\n"
                   f"[output]\ndirectory = {args.outdir}\nsnapshot_every = 100\n")
    code = simulate_main(["--config", str(cfg)])
    if code:
        return code
    with open(args.outdir / "diagnostics.csv") as fh:
        rows = list(csv.DictReader(fh))
    t = np.array([float(r["t"]) for r in rows])
    pf = np.array([float(r["pf_max"]) for r in rows])
    plug = np.array([float(r["plug_fraction"]) for r in rows])
    cross = int(np.argmax(pf > 2.0)) if np.any(pf > 2.0) else None
    print(f"steps {len(rows) - 1}, final t {t[-1]:.3f}")
    if cross is None:
        print("pf_max never exceeded p_s = 2")
    else:
        print(f"pf_max crosses p_s at t = {t[cross]:.3f}; plug fraction {plug[cross]:.4f} -> min {plug[cross:].min():.4f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
