"""Median epochs to RSE 1e-8 for ridge RCGLS and ridge GRCD across block sizes.

Usage: python3 scripts/block_size_sweep.py [--trials 10] [--out sweep]
"""

import argparse
from pathlib import Path

import numpy as np

from rcgls import ExperimentConfig, StopRule, SyntheticSpec, emit_outputs, run_experiment
from rcgls.bench import epochs_to_tolerance


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=200)
    ap.add_argument("--d", type=int, default=100)
    ap.add_argument("--lam", type=float, default=0.05)
    ap.add_argument("--q", type=int, nargs="+", default=[4, 8, 16, 32])
    ap.add_argument("--trials", type=int, default=10)
    ap.add_argument("--tol", type=float, default=1e-8)
    ap.add_argument("--out", type=Path, default=None, help="directory for CSV and SVG output per block size")
    args = ap.parse_args()

    print(f"{'q':>4} {'ridge-rcgls':>12} {'ridge-grcd':>12}")
    for q in args.q:
        config = ExperimentConfig(SyntheticSpec(args.n, args.d), methods=("ridge-rcgls", "ridge-grcd"), q=q,
                                  lam=args.lam, stop=StopRule(max_iterations=50_000, rse_tolerance=args.tol),
                                  trials=args.trials, seed=0)
        res = run_experiment(config)
        med = [float(np.median(epochs_to_tolerance(res.records, m, args.tol))) for m in config.methods]
        print(f"{q:>4} {med[0]:>12.1f} {med[1]:>12.1f}")
        if args.out is not None:
            emit_outputs(res.records, args.out / f"q{q}")


if __name__ == "__main__":
    main()
