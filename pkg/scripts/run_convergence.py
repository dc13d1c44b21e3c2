#!/usr/bin/env python3
"""Characteristic-network convergence ladder on the reference affine field.

Writes CSV/SVG evidence to the output directory and prints the fitted
log-log rate slope.
"""

import argparse

from charflow.harness import ExperimentConfig, fit_rate, run_convergence


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--config", default="configs/affine_m1_dy4.json")
    ap.add_argument("--out", default="out/convergence")
    ap.add_argument("--seed", type=int, default=None)
    args = ap.parse_args()

    cfg = ExperimentConfig.from_file(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    reports = run_convergence(cfg, out_dir=args.out)
    for r in reports:
        print(
            f"eps={r.eps}: {r.status} err={r.measured_err:.3e} "
            f"size={r.size} predicted={r.predicted:.3g} ({r.wall_time:.1f}s)"
        )
    ok = [r for r in reports if r.status != "SKIP"]
    if len(ok) >= 3:
        fit = fit_rate([(r.eps, r.size) for r in ok])
        print(f"rate slope: {fit['slope']:.3f} (target m+1 = 2)")


if __name__ == "__main__":
    main()
