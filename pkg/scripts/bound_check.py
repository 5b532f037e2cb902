"""Monte-Carlo check of the one-step expected energy decrease bound.

Prints, per problem and frozen iteration k, the sampled mean of the next
energy, the bound and their standard error.

Usage: python3 scripts/bound_check.py [--problems 5] [--samples 10000]
"""

import argparse

import numpy as np

from rcgls import SketchDistribution, contraction_factor, direct_oracle, verify_expected_decrease
from rcgls.theory import advance_state


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=12)
    ap.add_argument("--d", type=int, default=6)
    ap.add_argument("--problems", type=int, default=5)
    ap.add_argument("--samples", type=int, default=10_000)
    ap.add_argument("--k", type=int, nargs="+", default=[0, 3, 10])
    ap.add_argument("--dist", default="coord-weighted",
                    choices=["coord-weighted", "uniform-block", "identity", "gaussian"])
    ap.add_argument("--q", type=int, default=1)
    args = ap.parse_args()

    print(f"{'problem':>7} {'k':>3} {'mean':>12} {'bound':>12} {'std err':>10} {'holds':>6}")
    for p in range(args.problems):
        rng = np.random.default_rng(p)
        A = rng.standard_normal((args.n, args.d))
        b = rng.standard_normal(args.n)
        x_star = direct_oracle(A, b).x_star
        dist = SketchDistribution.from_name(args.dist, A, args.q)
        factor = contraction_factor(A, dist, rng=rng)
        for k in args.k:
            st = advance_state(A, b, dist, k, rng)
            chk = verify_expected_decrease(A, b, x_star, st, dist, args.samples, rng, factor=factor)
            print(f"{p:>7} {k:>3} {chk.lhs:>12.4e} {chk.rhs:>12.4e} {chk.standard_error:>10.2e} {chk.holds()!s:>6}")


if __name__ == "__main__":
    main()
