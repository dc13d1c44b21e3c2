#!/usr/bin/env python3
"""Size-vs-parametric-dimension study at fixed accuracy."""

import argparse

from charflow.harness import ExperimentConfig, run_dy_scaling


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--config", default="configs/affine_m1_dy4.json")
    ap.add_argument("--out", default="out/dy_scaling")
    ap.add_argument("--eps", type=float, default=0.05)
    args = ap.parse_args()

    cfg = ExperimentConfig.from_file(args.config)
    cfg.eps_ladder = [args.eps]
    reports, ratios = run_dy_scaling(cfg, out_dir=args.out)
    for d_y, r in zip(cfg.d_y_list, reports):
        print(f"d_y={d_y}: {r.status} size={r.size} err={r.measured_err:.3e}")
    print(f"size ratios per doubling: {[round(x, 3) for x in ratios]}")


if __name__ == "__main__":
    main()
