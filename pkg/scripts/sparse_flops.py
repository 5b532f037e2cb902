"""Flop totals of plain RCGLS, efficient RCGLS and GRCD on random sparse matrices.

Usage: python3 scripts/sparse_flops.py [--size 500] [--density 0.02 0.05] [--q 8]
"""

import argparse

import numpy as np
import scipy.sparse as sp

from rcgls import ProblemInstance, SketchDistribution, StopRule, run_solver


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--size", type=int, default=500)
    ap.add_argument("--density", type=float, nargs="+", default=[0.005, 0.02, 0.05, 0.2])
    ap.add_argument("--q", type=int, default=8)
    ap.add_argument("--iters", type=int, default=500)
    ap.add_argument("--seed", type=int, default=10)
    args = ap.parse_args()

    methods = ("rcgls", "rcgls-efficient", "grcd")
    print(f"{'density':>8} " + " ".join(f"{m:>16}" for m in methods) + f" {'eff/plain':>10}")
    for density in args.density:
        rng = np.random.default_rng(args.seed)
        A = sp.random(args.size, args.size, density=density, format="csc", random_state=rng,
                      data_rvs=rng.standard_normal)
        pr = ProblemInstance(A, rng.standard_normal(args.size))
        dist = SketchDistribution.uniform_block(args.size, args.q)
        flops = [run_solver(pr, m, dist, StopRule(args.iters), np.random.default_rng(args.seed + 1)).flops
                 for m in methods]
        print(f"{density:>8} " + " ".join(f"{f:>16d}" for f in flops) + f" {flops[1] / flops[0]:>10.3f}")


if __name__ == "__main__":
    main()
