"""Experiment harness: synthetic problems, seeded multi-trial runs, CSV and SVG output."""

from __future__ import annotations

import csv
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np
import scipy.linalg

from .flops import FlopCounter
from .linalg import ProblemInstance, RidgeProblem, direct_oracle, read_libsvm
from .ridge import RIDGE_METHODS, build_augmented, ridge_distribution, run_ridge, select_option, RidgeOption
from .sketching import SketchDistribution
from .solvers import METHODS, StopRule, TraceRecord, run_solver

logger = logging.getLogger(__name__)

RAW_HEADER = ("trial", "method", "k", "epoch", "rse", "flops", "wall_seconds")
SUMMARY_HEADER = ("method", "epoch", "min", "q25", "median", "q75", "max")
DENSE_ORACLE_MAX = 3000
THREADS_ENV = "RLS_SKETCH_THREADS"


# ---------------------------------------------------------------------------
# synthetic problems
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SyntheticSpec:
    n: int
    d: int
    cond: float = 1e4
    corr_base: float = 0.7
    corr_scale: float = 5.0
    noise_level: float = 0.1
    spectrum: str = "geometric-decay"
    sigma_max: float = 1.0

    def __post_init__(self):
        if self.n < 1 or self.d < 1:
            raise ValueError("n and d must be positive")
        if not self.cond > 1:
            raise ValueError("cond must exceed 1")
        if self.noise_level < 0:
            raise ValueError("noise_level must be nonnegative")
        if self.spectrum != "geometric-decay":
            raise ValueError(f"unknown spectrum {self.spectrum!r}")
        if min(self.n, self.d) < 2:
            raise ValueError("a spectrum with a condition number needs min(n, d) >= 2")


def covariance(d: int, base: float = 0.7, scale: float = 5.0) -> np.ndarray:
    """Toeplitz covariance ``scale * base^|i-j|``."""
    return scipy.linalg.toeplitz(scale * base ** np.arange(d))


def reference_signal(d: int) -> np.ndarray:
    return np.sin(np.pi * np.arange(1, d + 1) / (d + 1))


def generate_synthetic(spec: SyntheticSpec, rng: np.random.Generator, lam: Optional[float] = None):
    """Correlated Gaussian matrix with a prescribed spectrum, smooth signal and scaled noise.

    Returns ``(problem, x_bar)``; the problem is a :class:`RidgeProblem` when
    ``lam`` is given.
    """
    n, d = spec.n, spec.d
    base = rng.multivariate_normal(np.ones(d), covariance(d, spec.corr_base, spec.corr_scale), size=n,
                                   method="cholesky")
    U, _, Vt = np.linalg.svd(base, full_matrices=False)
    m = min(n, d)
    rho = spec.cond ** (-1.0 / (m - 1))
    sigma = spec.sigma_max * rho ** np.arange(m)
    A = (U * sigma) @ Vt
    x_bar = reference_signal(d)
    clean = A @ x_bar
    noise = rng.standard_normal(n)
    nn = np.linalg.norm(noise)
    if spec.noise_level > 0 and nn > 0:
        noise *= spec.noise_level * np.linalg.norm(clean) / nn
    else:
        noise[:] = 0.0
    b = clean + noise
    problem = ProblemInstance(A, b) if lam is None else RidgeProblem(A, b, lam)
    return problem, x_bar


# ---------------------------------------------------------------------------
# experiments
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RunRecord:
    trial: int
    method: str
    k: int
    epoch: float
    rse: float
    flops: int
    wall_seconds: float


@dataclass
class ExperimentConfig:
    source: Union[SyntheticSpec, str]  # synthetic spec or LIBSVM path
    methods: Sequence[str] = ("rcgls",)
    dist: str = "uniform-block"
    q: int = 1
    lam: Optional[float] = None
    option: Union[str, int] = "auto"
    stop: StopRule = field(default_factory=lambda: StopRule(max_iterations=1000, rse_tolerance=1e-10))
    trials: int = 10
    seed: int = 0
    record_wall: bool = True

    def __post_init__(self):
        if self.trials < 1:
            raise ValueError("trials must be at least 1")
        known = METHODS + RIDGE_METHODS
        for m in self.methods:
            if m not in known:
                raise ValueError(f"unknown method {m!r}")
        ridge = [m in RIDGE_METHODS for m in self.methods]
        if any(ridge) and self.lam is None:
            raise ValueError("ridge methods need lam")
        if self.lam is not None and not all(ridge):
            raise ValueError("with lam set, every method must be a ridge method")


@dataclass
class ExperimentResult:
    records: list
    failures: list  # (trial, method, message)
    notes: list


def load_problem(config: ExperimentConfig, rng: np.random.Generator):
    if isinstance(config.source, SyntheticSpec):
        problem, _ = generate_synthetic(config.source, rng, config.lam)
        return problem
    base = read_libsvm(config.source)
    return base if config.lam is None else RidgeProblem(base.A, base.b, config.lam)


def reference_solution(problem, notes: list) -> np.ndarray:
    """``x*`` by the dense oracle, or by a long CGLS run past the dense size limit."""
    n, d = problem.shape
    lam = getattr(problem, "lam", 0.0)
    if max(n, d) <= DENSE_ORACLE_MAX:
        return direct_oracle(problem.A, problem.b, lam).x_star
    notes.append(f"x* from CGLS to 1e-14 gradient tolerance ({n}x{d} exceeds the dense oracle limit)")
    if lam:
        system = build_augmented(problem)
        op, rhs = (system.V, system.b_hat) if select_option(n, d) is RidgeOption.I else (system.U, system.b_hat)
        scale = float(np.linalg.norm(op.rmatvec(rhs)))
        res = run_solver(ProblemInstance(op.matrix, rhs), "cgls", None,
                         StopRule(max_iterations=100 * (n + d), gradient_tolerance=1e-14 * scale))
        if op is system.V:
            return res.x
        return system.A_bar.rmatvec(res.x) / system.sqrt_lam
    scale = float(np.linalg.norm(problem.A.T @ problem.b))
    return run_solver(problem, "cgls", None,
                      StopRule(max_iterations=100 * d, gradient_tolerance=1e-14 * scale)).x


def _sketch_setup(problem, method: str, config: ExperimentConfig):
    """Augmented system, option and sketch law for one method."""
    n, d = problem.shape
    if method in RIDGE_METHODS:
        system = build_augmented(problem)
        opt = select_option(n, d) if config.option == "auto" else RidgeOption(int(config.option))
        dist = ridge_distribution(config.dist, system, opt, config.q)
        return system, opt, dist
    if method == "cgls":
        return None, None, SketchDistribution.identity(d)
    return None, None, SketchDistribution.from_name(config.dist, problem.A, config.q)


def run_trial(config: ExperimentConfig, t: int) -> tuple[list, list, list]:
    seeds = np.random.SeedSequence([config.seed, t]).spawn(1 + len(config.methods))
    notes: list = []
    problem = load_problem(config, np.random.default_rng(seeds[0]))
    x_star = reference_solution(problem, notes)
    records, failures = [], []
    for method, ss in zip(config.methods, seeds[1:]):
        rng = np.random.default_rng(ss)
        try:
            system, opt, dist = _sketch_setup(problem, method, config)
            m, q = min(problem.shape), dist.q
            recs = [RunRecord(t, method, 0, 0.0, 1.0, 0, 0.0)]

            def sink(rec: TraceRecord, recs=recs, m=m, q=q, method=method):
                wall = rec.wall_time if config.record_wall else 0.0
                recs.append(RunRecord(t, method, rec.k, float(Fraction(rec.k * q, m)), rec.rse, rec.flops, wall))

            counter = FlopCounter()
            if method in RIDGE_METHODS:
                run_ridge(system, method, dist, config.stop, opt, rng, sink, x_star=x_star, flops=counter)
            else:
                run_solver(problem, method, dist, config.stop, rng, sink, x_star=x_star, flops=counter)
            records.extend(recs)
        except Exception as exc:  # keep the other methods running
            logger.exception("trial %d method %s failed", t, method)
            failures.append((t, method, f"{type(exc).__name__}: {exc}"))
    return records, failures, notes


def thread_count(trials: int) -> int:
    raw = os.environ.get(THREADS_ENV)
    cap = os.cpu_count() or 1
    if raw:
        try:
            cap = max(1, int(raw))
        except ValueError:
            logger.warning("ignoring non-integer %s=%r", THREADS_ENV, raw)
    return max(1, min(cap, trials))


def run_experiment(config: ExperimentConfig) -> ExperimentResult:
    """Run every method on every trial; output order is (trial, method, k)."""
    workers = thread_count(config.trials)
    if workers == 1:
        parts = [run_trial(config, t) for t in range(config.trials)]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(lambda t: run_trial(config, t), range(config.trials)))
    out = ExperimentResult([], [], [])
    for recs, fails, notes in parts:
        out.records.extend(recs)
        out.failures.extend(fails)
        out.notes.extend(notes)
    return out


def epochs_to_tolerance(records: Sequence[RunRecord], method: str, tol: float) -> list:
    """Per-trial epoch of the first record with ``rse < tol`` (``inf`` if never reached)."""
    first: dict = {}
    trials = set()
    for r in records:
        if r.method != method:
            continue
        trials.add(r.trial)
        if r.rse < tol and r.trial not in first:
            first[r.trial] = r.epoch
    return [first.get(t, math.inf) for t in sorted(trials)]


# ---------------------------------------------------------------------------
# summaries and output
# ---------------------------------------------------------------------------


def nearest_rank(values: Sequence[float], p: float) -> float:
    """Nearest-rank quantile: the ``ceil(p N)``-th smallest value (``p = 0`` gives the minimum)."""
    v = sorted(values)
    if not v:
        raise ValueError("no values")
    idx = max(0, math.ceil(p * len(v)) - 1)
    return v[idx]


def _carried(xs: np.ndarray, ys: np.ndarray, grid: np.ndarray) -> np.ndarray:
    """Last value at or before each grid point (``xs`` sorted)."""
    pos = np.searchsorted(xs, grid, side="right") - 1
    return ys[np.clip(pos, 0, len(ys) - 1)]


def quantile_bands(records: Sequence[RunRecord], method: str, axis: str = "epoch", points: int = 50):
    """Grid over ``axis`` and the five nearest-rank quantiles of RSE at each point."""
    by_trial: dict = {}
    for r in records:
        if r.method == method:
            by_trial.setdefault(r.trial, []).append(r)
    if not by_trial:
        raise ValueError(f"no records for {method}")
    series = []
    top = 0.0
    for t in sorted(by_trial):
        rs = sorted(by_trial[t], key=lambda r: r.k)
        xs = np.array([getattr(r, axis) for r in rs], dtype=float)
        xs = np.maximum.accumulate(xs)
        ys = np.array([r.rse for r in rs])
        series.append((xs, ys))
        top = max(top, xs[-1])
    grid = np.linspace(0.0, top, points) if top > 0 else np.zeros(1)
    cols = np.array([_carried(xs, ys, grid) for xs, ys in series])
    bands = np.array([[nearest_rank(cols[:, j], p) for p in (0.0, 0.25, 0.5, 0.75, 1.0)]
                      for j in range(len(grid))])
    return grid, bands


def write_raw_csv(records: Sequence[RunRecord], path: Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RAW_HEADER)
        for r in records:
            w.writerow([r.trial, r.method, r.k, repr(r.epoch), repr(r.rse), r.flops, repr(r.wall_seconds)])


def write_summary_csv(records: Sequence[RunRecord], path: Path, points: int = 50) -> None:
    methods = list(dict.fromkeys(r.method for r in records))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SUMMARY_HEADER)
        for m in methods:
            grid, bands = quantile_bands(records, m, "epoch", points)
            for g, row in zip(grid, bands):
                w.writerow([m, repr(float(g))] + [repr(float(v)) for v in row])


_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf")


def render_svg(records: Sequence[RunRecord], axis: str, points: int = 100, width: int = 640,
               height: int = 420) -> str:
    """Median line with 25-75 and min-max bands per method; RSE on a log axis."""
    methods = list(dict.fromkeys(r.method for r in records))
    data = {m: quantile_bands(records, m, axis, points) for m in methods}
    positive = [v for _, b in data.values() for v in b.ravel() if v > 0]
    lo = math.floor(math.log10(min(positive))) if positive else -16
    hi = math.ceil(math.log10(max(positive))) if positive else 0
    if hi <= lo:
        hi = lo + 1
    xmax = max((g[-1] for g, _ in data.values()), default=1.0) or 1.0
    left, right, top, bottom = 70, 150, 20, 50
    pw, ph = width - left - right, height - top - bottom

    def X(v):
        return left + pw * v / xmax

    def Y(v):
        lv = math.log10(v) if v > 0 else lo
        return top + ph * (hi - min(max(lv, lo), hi)) / (hi - lo)

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">',
           f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="white" stroke="black"/>']
    for e in range(lo, hi + 1):
        y = Y(10.0**e)
        out.append(f'<line x1="{left}" y1="{y:.2f}" x2="{left + pw}" y2="{y:.2f}" stroke="#ddd"/>')
        out.append(f'<text x="{left - 6}" y="{y + 4:.2f}" text-anchor="end">1e{e}</text>')
    for i in range(6):
        v = xmax * i / 5
        out.append(f'<text x="{X(v):.2f}" y="{top + ph + 16}" text-anchor="middle">{v:.4g}</text>')
    label = {"epoch": "epoch", "wall_seconds": "wall time (s)", "flops": "flops"}.get(axis, axis)
    out.append(f'<text x="{left + pw / 2}" y="{height - 10}" text-anchor="middle">{label}</text>')
    out.append(f'<text x="16" y="{top + ph / 2}" transform="rotate(-90 16 {top + ph / 2})" '
               f'text-anchor="middle">RSE</text>')
    for idx, m in enumerate(methods):
        color = _PALETTE[idx % len(_PALETTE)]
        grid, bands = data[m]
        for lo_col, hi_col, alpha in ((0, 4, 0.15), (1, 3, 0.3)):
            upper = " ".join(f"{X(g):.2f},{Y(v):.2f}" for g, v in zip(grid, bands[:, hi_col]))
            lower = " ".join(f"{X(g):.2f},{Y(v):.2f}" for g, v in zip(grid[::-1], bands[::-1, lo_col]))
            out.append(f'<polygon points="{upper} {lower}" fill="{color}" fill-opacity="{alpha}" stroke="none"/>')
        line = " ".join(f"{X(g):.2f},{Y(v):.2f}" for g, v in zip(grid, bands[:, 2]))
        out.append(f'<polyline points="{line}" fill="none" stroke="{color}" stroke-width="2"/>')
        ly = top + 14 + 16 * idx
        out.append(f'<line x1="{left + pw + 10}" y1="{ly - 4}" x2="{left + pw + 30}" y2="{ly - 4}" '
                   f'stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{left + pw + 34}" y="{ly}">{m}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def emit_outputs(records: Sequence[RunRecord], out_dir, points: int = 50) -> dict:
    """Write ``raw.csv``, ``summary.csv`` and one SVG per x-axis; returns the paths."""
    if not records:
        raise ValueError("no records to write")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if not os.access(out, os.W_OK):
        raise PermissionError(f"{out} is not writable")
    paths = {"raw": out / "raw.csv", "summary": out / "summary.csv"}
    write_raw_csv(records, paths["raw"])
    write_summary_csv(records, paths["summary"], points)
    for axis, name in (("epoch", "epoch_rse.svg"), ("wall_seconds", "wall_rse.svg"), ("flops", "flops_rse.svg")):
        paths[axis] = out / name
        paths[axis].write_text(render_svg(records, axis))
    return paths
