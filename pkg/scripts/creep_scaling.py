"""Creep speed of a below-yield channel as the regularisation scale shrinks."""

import argparse

import numpy as np

from channel_oracle import H, TAU, steady


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--ny", type=int, default=64)
    ap.add_argument("--halvings", type=int, default=3)
    ap.add_argument("--eps0", type=float, default=1e-2)
    args = ap.parse_args()
    G = 0.5 * np.sqrt(2.0) * TAU / H  # half the wall-yield forcing
    print(f"G = {G:.4f} (|G| H / 2 = {G * H / 2:.3f} < tau = {TAU})")
    prev = None
    for k in range(args.halvings + 1):
        eps = args.eps0 / 2 ** k
        _, st = steady(args.ny, eps, G)
        speed = st.v.max_abs()
        ratio = "" if prev is None else f"  ratio {prev / speed:.3f}"
        print(f"eps {eps:.3e}  max speed {speed:.4e}{ratio}")
        prev = speed


if __name__ == "__main__":
    main()
