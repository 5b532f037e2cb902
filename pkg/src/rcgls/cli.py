"""Command-line entry point: ``rcgls {solve,ridge,rates,bench}``."""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

import numpy as np

from .bench import ExperimentConfig, SyntheticSpec, emit_outputs, generate_synthetic, reference_solution, run_experiment
from .linalg import RidgeProblem, read_libsvm
from .ridge import RIDGE_METHODS, build_augmented, ridge_distribution, run_ridge, select_option, RidgeOption
from .sketching import SketchDistribution
from .solvers import METHODS, StopRule, run_solver
from .theory import rate_report

DISTS = ("uniform-block", "coord-weighted", "identity", "gaussian")


def _add_common(p: argparse.ArgumentParser, methods, default_method) -> None:
    p.add_argument("--matrix", default="synthetic", help="'synthetic' or 'libsvm:PATH'")
    p.add_argument("--n", type=int, default=200)
    p.add_argument("--d", type=int, default=100)
    p.add_argument("--cond", type=float, default=1e4)
    p.add_argument("--noise", type=float, default=0.1)
    p.add_argument("--method", action="append", choices=methods, help=f"repeatable (default {default_method})")
    p.add_argument("--dist", choices=DISTS, default="uniform-block")
    p.add_argument("--q", type=int, default=8)
    p.add_argument("--tol-rse", type=float, default=None)
    p.add_argument("--tol-grad", type=float, default=None)
    p.add_argument("--max-iters", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, default=None, help="output directory")
    p.set_defaults(default_method=default_method)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rcgls", description="Randomized conjugate gradient least squares toolkit")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", help="least squares on one problem")
    _add_common(p, METHODS, "rcgls")

    p = sub.add_parser("ridge", help="ridge regression on one problem")
    _add_common(p, RIDGE_METHODS, "ridge-rcgls")
    p.add_argument("--lambda", dest="lam", type=float, required=True)
    p.add_argument("--option", choices=("auto", "1", "2"), default="auto")

    p = sub.add_parser("rates", help="contraction factors and realized gammas as CSV")
    _add_common(p, ("rcgls",), "rcgls")
    p.add_argument("--samples", type=int, default=10_000, help="Monte-Carlo draws for M")

    p = sub.add_parser("bench", help="multi-trial experiment with CSV and SVG output")
    _add_common(p, METHODS + RIDGE_METHODS, "rcgls")
    p.add_argument("--lambda", dest="lam", type=float, default=None)
    p.add_argument("--option", choices=("auto", "1", "2"), default="auto")
    p.add_argument("--trials", type=int, default=10)
    p.add_argument("--no-wall", action="store_true", help="write zero wall time for byte-stable CSVs")
    return parser


def _source(args):
    if args.matrix == "synthetic":
        return SyntheticSpec(args.n, args.d, cond=args.cond, noise_level=args.noise)
    if args.matrix.startswith("libsvm:"):
        return args.matrix[len("libsvm:"):]
    raise SystemExit(f"--matrix must be 'synthetic' or 'libsvm:PATH', got {args.matrix!r}")


def _problem(args, lam=None):
    src = _source(args)
    rng = np.random.default_rng([args.seed, 0])
    if isinstance(src, SyntheticSpec):
        return generate_synthetic(src, rng, lam)[0]
    base = read_libsvm(src)
    return base if lam is None else RidgeProblem(base.A, base.b, lam)


def _stop(args) -> StopRule:
    return StopRule(max_iterations=args.max_iters, rse_tolerance=args.tol_rse, gradient_tolerance=args.tol_grad)


def _write_trace(path: Path, method: str, trace) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("k", "rse", "grad_norm", "flops", "wall_seconds"))
        for r in trace:
            w.writerow((r.k, repr(r.rse), repr(r.grad_norm), r.flops, repr(r.wall_time)))


def _report(method, res, out) -> None:
    last = res.trace[-1] if res.trace else None
    rse = f"{last.rse:.3e}" if last else "1"
    print(f"{method}: {res.reason} after {res.iterations} iterations, rse {rse}, flops {res.flops}")
    if out is not None:
        _write_trace(out / f"{method}.csv", method, res.trace)


def cmd_solve(args) -> int:
    problem = _problem(args)
    notes: list = []
    x_star = reference_solution(problem, notes)
    for note in notes:
        print(note)
    for i, method in enumerate(args.method or [args.default_method]):
        dist = None if method == "cgls" else SketchDistribution.from_name(args.dist, problem.A, args.q)
        res = run_solver(problem, method, dist, _stop(args), np.random.default_rng([args.seed, 1, i]),
                         x_star=x_star)
        _report(method, res, args.out)
    return 0


def cmd_ridge(args) -> int:
    problem = _problem(args, args.lam)
    notes: list = []
    x_star = reference_solution(problem, notes)
    for note in notes:
        print(note)
    system = build_augmented(problem)
    opt = select_option(*problem.shape) if args.option == "auto" else RidgeOption(int(args.option))
    dist = ridge_distribution(args.dist, system, opt, args.q)
    print(f"Option {opt.name}")
    for i, method in enumerate(args.method or [args.default_method]):
        res = run_ridge(system, method, dist, _stop(args), opt, np.random.default_rng([args.seed, 1, i]),
                        x_star=x_star)
        _report(method, res, args.out)
    return 0


def cmd_rates(args) -> int:
    problem = _problem(args)
    dist = SketchDistribution.from_name(args.dist, problem.A, args.q)
    rep = rate_report(problem.A, problem.b, dist, steps=args.max_iters, rng=np.random.default_rng(args.seed),
                      num_samples=args.samples)
    print(f"sigma_min^2(A M^1/2) = {rep.sigma_min_sq:.6e}")
    print(f"GRCD factor = {rep.grcd_factor:.12f}")
    print(f"min gamma = {rep.gamma_min:.6f}")
    if args.out is not None:
        args.out.mkdir(parents=True, exist_ok=True)
        with open(args.out / "rates.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(("k", "gamma", "rcgls_factor", "grcd_factor", "empirical_ratio"))
            factors = rep.rcgls_factors()
            for k, (g, f) in enumerate(zip(rep.gamma_samples, factors)):
                ratio = rep.empirical_ratios[k] if k < len(rep.empirical_ratios) else float("nan")
                w.writerow((k, repr(float(g)), repr(float(f)), repr(rep.grcd_factor), repr(ratio)))
    return 0


def cmd_bench(args) -> int:
    methods = tuple(args.method or [args.default_method])
    cfg = ExperimentConfig(_source(args), methods=methods, dist=args.dist, q=args.q, lam=args.lam,
                           option=args.option, stop=_stop(args), trials=args.trials, seed=args.seed,
                           record_wall=not args.no_wall)
    res = run_experiment(cfg)
    for note in dict.fromkeys(res.notes):
        print(note)
    for t, m, msg in res.failures:
        print(f"trial {t} {m} failed: {msg}", file=sys.stderr)
    if not res.records:
        print("no records produced", file=sys.stderr)
        return 1
    out = args.out if args.out is not None else Path("bench-out")
    for name, path in emit_outputs(res.records, out).items():
        print(f"{name}: {path}")
    return 1 if res.failures else 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    handler = {"solve": cmd_solve, "ridge": cmd_ridge, "rates": cmd_rates, "bench": cmd_bench}[args.command]
    try:
        return handler(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
