#!/usr/bin/env python3
"""Build and certify a solution surrogate, including the sign experiment."""

import argparse

import numpy as np

from charflow import oracle, transport_core as tc
from charflow.harness import ExperimentConfig


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--config", default="configs/solution_affine.json")
    ap.add_argument("--eps", type=float, default=0.1)
    ap.add_argument("--samples", type=int, default=600)
    args = ap.parse_args()

    cfg = ExperimentConfig.from_file(args.config)
    problem = tc.problem_from_dict(cfg.problem)
    net = tc.build_solution_net(problem, args.eps)
    t, x, y = problem.sample_inputs(args.samples, cfg.seed)
    u0_part, f_part = net.eval_parts(t, x, y)
    ref = oracle.solution_oracle(
        problem, t, x, y, oracle.OdeConfig(steps=64, tol=args.eps / 100)
    )
    plus = float(np.abs(u0_part + f_part - ref).max())
    minus = float(np.abs(u0_part - f_part - ref).max())
    print(f"certified bound: {net.report['certified_bound']:.4f} (target {args.eps})")
    print(f"measured error (plus sign):  {plus:.4e}")
    print(f"measured error (minus sign): {minus:.4e}")
    print(f"size={net.report['size']} depth={net.report['depth']} q_src={net.report['q_src']}")


if __name__ == "__main__":
    main()
