"""Ridge regression through the block-orthogonal augmented system.

The ridge problem ``min ||A x - b||^2 + lam ||x||^2`` is the augmented system
``A_hat x_hat = b_hat`` with

    A_hat = [[sqrt(lam) I, A], [A^T, -sqrt(lam) I]],   b_hat = (b; 0).

Its column blocks ``U = [sqrt(lam) I; A^T]`` (n columns) and
``V = [A; -sqrt(lam) I]`` (d columns) are orthogonal, so the system splits
into two least-squares problems:

* Option I sketches in ``R^d`` and solves ``min ||V x - b_hat||``, whose
  normal equations are ``(A^T A + lam I) x = A^T b``;
* Option II sketches in ``R^n`` and solves ``min ||U y - b_hat||``, then
  recovers ``x = A^T y / sqrt(lam)``.

Both are run by conjugate sketched iterations written in terms of ``A``
only; the efficient variant hands ``V`` or ``U`` to the generic engine.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Optional, Union

import numpy as np
import scipy.sparse as sp

from .flops import NULL_COUNTER, FlopCounter
from .linalg import ColumnOperator, RidgeProblem, to_dense
from .sketching import (SketchDistribution, SketchSample, draw, sketch_apply, sketch_apply_transpose,
                        sketch_block, sketched_frobenius_sq)
from .solvers import EPS, NOISE_MARGIN, SolveResult, StopRule, drive, efficient_init, efficient_rcgls_step, efficient_solution

logger = logging.getLogger(__name__)

RIDGE_METHODS = ("ridge-rcgls", "ridge-rcgls-efficient", "ridge-grcd")

DENSE_CUTOFF = 4000


class RidgeOption(Enum):
    I = 1
    II = 2


# ---------------------------------------------------------------------------
# augmented system
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AugmentedSystem:
    """Structured views of the augmented ridge system; ``A_hat`` is never stored."""

    A_bar: ColumnOperator
    A_bar_t: ColumnOperator  # columns are the rows of A_bar
    b_bar: np.ndarray
    lam: float
    U: ColumnOperator
    V: ColumnOperator
    b_hat: np.ndarray

    @property
    def sqrt_lam(self) -> float:
        return math.sqrt(self.lam)

    @property
    def shape(self) -> tuple[int, int]:
        return self.A_bar.shape

    def a_hat_matvec(self, x_hat: np.ndarray) -> np.ndarray:
        """``A_hat @ x_hat = U x_hat[:n] + V x_hat[n:]``."""
        n, d = self.shape
        x_hat = np.asarray(x_hat, dtype=float)
        if x_hat.shape != (n + d,):
            raise ValueError(f"x_hat must have length {n + d}")
        return self.U.matvec(x_hat[:n]) + self.V.matvec(x_hat[n:])

    def a_hat_row(self, i: int) -> np.ndarray:
        n, d = self.shape
        out = np.zeros(n + d)
        s = self.sqrt_lam
        if 0 <= i < n:
            out[i] = s
            out[n:] = self.A_bar_t.column_block(np.array([i])).combine(np.ones(1)).to_dense()
        elif n <= i < n + d:
            out[:n] = self.A_bar.column_block(np.array([i - n])).combine(np.ones(1)).to_dense()
            out[i] = -s
        else:
            raise IndexError(f"row {i} out of range for {n + d} rows")
        return out

    def a_hat_dense(self) -> np.ndarray:
        n, d = self.shape
        if n + d > DENSE_CUTOFF:
            raise MemoryError(f"refusing to materialize a {n + d}-square augmented matrix")
        return np.hstack([self.U.toarray(), self.V.toarray()])


def build_augmented(problem: RidgeProblem) -> AugmentedSystem:
    if not problem.lam > 0:
        raise ValueError("ridge parameter must be positive")
    A = problem.A
    n, d = A.shape
    s = math.sqrt(problem.lam)
    A_sp = sp.csc_array(A)
    U = sp.vstack([s * sp.eye_array(n, format="csc"), A_sp.T]).tocsc()
    V = sp.vstack([A_sp, -s * sp.eye_array(d, format="csc")]).tocsc()
    A_t = A_sp.T.tocsc() if sp.issparse(A) else np.ascontiguousarray(to_dense(A).T)
    b_hat = np.concatenate([problem.b, np.zeros(d)])
    return AugmentedSystem(ColumnOperator(A), ColumnOperator(A_t), problem.b.copy(), problem.lam,
                           ColumnOperator(U), ColumnOperator(V), b_hat)


def select_option(n: int, d: int, access: str = "both") -> RidgeOption:
    """Option I needs column access, Option II row access; with both, sketch the smaller side."""
    if access == "columns-only":
        return RidgeOption.I
    if access == "rows-only":
        return RidgeOption.II
    if access != "both":
        raise ValueError(f"unknown access mode {access!r}")
    return RidgeOption.I if n >= d else RidgeOption.II


def _as_option(option) -> RidgeOption:
    if isinstance(option, RidgeOption):
        return option
    return RidgeOption(int(option))


def ridge_distribution(name: str, system: AugmentedSystem, option, q: int = 1) -> SketchDistribution:
    """Sketch law over ``R^d`` (Option I) or ``R^n`` (Option II).

    Coordinate weighting uses the column norms of ``V`` or ``U``.
    """
    op = system.V if _as_option(option) is RidgeOption.I else system.U
    return SketchDistribution.from_name(name, op, q)


# ---------------------------------------------------------------------------
# Option I
# ---------------------------------------------------------------------------


@dataclass
class RidgeStateI:
    x: np.ndarray
    g: np.ndarray  # b - A x
    w: np.ndarray
    p: np.ndarray
    u: np.ndarray  # A p
    sigma: float
    tau: float = 0.0
    mu: float = 0.0
    k: int = 0
    scale: float = 1.0
    rescues: int = 0


def _cutoff(col_sq: np.ndarray, S: SketchSample, thr: float, scale: float, magnitude: float, k: int) -> float:
    """Zero test for ``w``; ``magnitude`` bounds the summands that form it."""
    floor = math.sqrt(sketched_frobenius_sq(S, col_sq)) * NOISE_MARGIN * magnitude * math.sqrt(k + 1)
    return thr * max(scale, floor)


def _v_col_sq(system: AugmentedSystem) -> np.ndarray:
    return system.V.col_sq_norms


def _u_col_sq(system: AugmentedSystem) -> np.ndarray:
    return system.U.col_sq_norms


def _option1_direction(system: AugmentedSystem, S: SketchSample, x, g, thr, scale, k, flops):
    """``w = S^T A^T g - lam S^T x`` and its images ``S w``, ``A S w``."""
    block = sketch_block(system.A_bar, S)
    w = block.rdot(g) - system.lam * sketch_apply_transpose(S, x)
    magnitude = float(np.linalg.norm(system.b_bar)) + system.sqrt_lam * float(np.linalg.norm(x))
    flops.add(block.nnz + 2 * w.shape[0] + x.shape[0])
    if math.sqrt(float(w @ w)) <= _cutoff(_v_col_sq(system), S, thr, scale, magnitude, k):
        w = np.zeros_like(w)
    z = sketch_apply(S, w)
    Az = block.combine(w)
    flops.add(block.nnz)
    return w, z, Az


def ridge_option1_init(system: AugmentedSystem, S0: SketchSample, x0=None, zero_threshold: float = EPS,
                       flops: FlopCounter = NULL_COUNTER) -> RidgeStateI:
    n, d = system.shape
    x = np.zeros(d) if x0 is None else np.asarray(x0, dtype=float).copy()
    if x.shape != (d,):
        raise ValueError(f"x0 must have length {d}")
    g = system.b_bar - system.A_bar.matvec(x)
    scale = float(np.linalg.norm(system.A_bar.rmatvec(system.b_bar)))
    flops.add(2 * system.A_bar.nnz + n)
    w, z, Az = _option1_direction(system, S0, x, g, zero_threshold, scale, 0, flops)
    p, u = z.to_dense(), Az.to_dense()
    sigma = Az.norm_sq() + system.lam * z.norm_sq()
    flops.add(Az.nnz + z.nnz)
    return RidgeStateI(x, g, w, p, u, sigma, scale=scale)


def _rescue(recompute: Callable[[], float], where: str, k: int, flops, size: int) -> float:
    flops.add(size)
    logger.info("%s: sigma lost positivity at k=%d, recomputed directly", where, k)
    return recompute()


def ridge_option1_step(state: RidgeStateI, system: AugmentedSystem, S_next: SketchSample,
                       zero_threshold: float = EPS, flops: FlopCounter = NULL_COUNTER) -> RidgeStateI:
    """One RidgeRCGLS step on ``min ||V x - b_hat||``; returns a new state."""
    n, d = system.shape
    lam = system.lam
    st = state
    ww = float(st.w @ st.w)
    flops.add(st.w.shape[0])
    mu = ww / st.sigma if st.sigma > 0 and ww > 0 else 0.0
    x = st.x + mu * st.p
    g = st.g - mu * st.u
    flops.add(n + d)
    w, z, Az = _option1_direction(system, S_next, x, g, zero_threshold, st.scale, st.k + 1, flops)
    tau = -(Az.dot(st.u) + lam * z.dot(st.p)) / st.sigma if st.sigma > 0 else 0.0
    p = tau * st.p
    z.add_into(p)
    u = tau * st.u
    Az.add_into(u)
    sigma = -tau * tau * st.sigma + lam * z.norm_sq() + Az.norm_sq()
    flops.add(3 * Az.nnz + 3 * z.nnz + n + d)
    rescues = st.rescues
    if sigma <= 0.0 and w.any():
        sigma = _rescue(lambda: float(u @ u) + lam * float(p @ p), "ridge option I", st.k, flops, n + d)
        rescues += 1
    return RidgeStateI(x, g, w, p, u, max(sigma, 0.0), tau, mu, st.k + 1, st.scale, rescues)


def augmented_residual(state: RidgeStateI, system: AugmentedSystem) -> np.ndarray:
    """Implicit Option I residual ``b_hat - V x = (g; sqrt(lam) x)``."""
    return np.concatenate([state.g, system.sqrt_lam * state.x])


# ---------------------------------------------------------------------------
# Option II
# ---------------------------------------------------------------------------


@dataclass
class RidgeStateII:
    y: np.ndarray
    x: np.ndarray  # A^T y / sqrt(lam)
    w: np.ndarray
    p: np.ndarray
    u: np.ndarray  # A^T p
    sigma: float
    tau: float = 0.0
    mu: float = 0.0
    k: int = 0
    scale: float = 1.0
    rescues: int = 0


def _option2_direction(system: AugmentedSystem, S: SketchSample, x, y, thr, scale, k, flops):
    """``w = sqrt(lam) S^T (b - A x) - lam S^T y`` and its images ``S w``, ``A^T S w``."""
    s = system.sqrt_lam
    block = sketch_block(system.A_bar_t, S)
    w = s * (sketch_apply_transpose(S, system.b_bar) - block.rdot(x)) - system.lam * sketch_apply_transpose(S, y)
    # x is carried incrementally, so its mismatch with A^T y / sqrt(lam) is rounding of the same size
    magnitude = float(np.linalg.norm(system.b_bar)) + s * (float(np.linalg.norm(x)) + float(np.linalg.norm(y)))
    flops.add(block.nnz + 3 * w.shape[0] + x.shape[0] + y.shape[0])
    if math.sqrt(float(w @ w)) <= _cutoff(_u_col_sq(system), S, thr, scale, magnitude, k):
        w = np.zeros_like(w)
    z = sketch_apply(S, w)
    Atz = block.combine(w)
    flops.add(block.nnz)
    return w, z, Atz


def ridge_option2_init(system: AugmentedSystem, S0: SketchSample, y0=None, zero_threshold: float = EPS,
                       flops: FlopCounter = NULL_COUNTER) -> RidgeStateII:
    n, d = system.shape
    y = np.zeros(n) if y0 is None else np.asarray(y0, dtype=float).copy()
    if y.shape != (n,):
        raise ValueError(f"y0 must have length {n}")
    x = system.A_bar.rmatvec(y) / system.sqrt_lam
    scale = system.sqrt_lam * float(np.linalg.norm(system.b_bar))
    flops.add(system.A_bar.nnz + d + n)
    w, z, Atz = _option2_direction(system, S0, x, y, zero_threshold, scale, 0, flops)
    sigma = Atz.norm_sq() + system.lam * z.norm_sq()
    flops.add(Atz.nnz + z.nnz)
    return RidgeStateII(y, x, w, z.to_dense(), Atz.to_dense(), sigma, scale=scale)


def ridge_option2_step(state: RidgeStateII, system: AugmentedSystem, S_next: SketchSample,
                       zero_threshold: float = EPS, flops: FlopCounter = NULL_COUNTER) -> RidgeStateII:
    """One RidgeRCGLS step on ``min ||U y - b_hat||``; ``x`` follows through ``u``."""
    n, d = system.shape
    lam = system.lam
    st = state
    ww = float(st.w @ st.w)
    flops.add(st.w.shape[0])
    mu = ww / st.sigma if st.sigma > 0 and ww > 0 else 0.0
    y = st.y + mu * st.p
    x = st.x + (mu / system.sqrt_lam) * st.u
    flops.add(n + d)
    w, z, Atz = _option2_direction(system, S_next, x, y, zero_threshold, st.scale, st.k + 1, flops)
    tau = -(Atz.dot(st.u) + lam * z.dot(st.p)) / st.sigma if st.sigma > 0 else 0.0
    p = tau * st.p
    z.add_into(p)
    u = tau * st.u
    Atz.add_into(u)
    sigma = -tau * tau * st.sigma + lam * z.norm_sq() + Atz.norm_sq()
    flops.add(3 * Atz.nnz + 3 * z.nnz + n + d)
    rescues = st.rescues
    if sigma <= 0.0 and w.any():
        sigma = _rescue(lambda: float(u @ u) + lam * float(p @ p), "ridge option II", st.k, flops, n + d)
        rescues += 1
    return RidgeStateII(y, x, w, p, u, max(sigma, 0.0), tau, mu, st.k + 1, st.scale, rescues)


# ---------------------------------------------------------------------------
# RidgeGRCD
# ---------------------------------------------------------------------------


@dataclass
class RidgeGrcdState:
    """Option I keeps ``(x, g = b - A x)``; Option II keeps ``(y, x = A^T y / sqrt(lam))``."""

    option: RidgeOption
    x: np.ndarray
    aux: np.ndarray
    k: int = 0
    scale: float = 1.0


def ridge_grcd_init(system: AugmentedSystem, option, x0=None, y0=None,
                    flops: FlopCounter = NULL_COUNTER) -> RidgeGrcdState:
    option = _as_option(option)
    n, d = system.shape
    if option is RidgeOption.I:
        x = np.zeros(d) if x0 is None else np.asarray(x0, dtype=float).copy()
        g = system.b_bar - system.A_bar.matvec(x)
        scale = float(np.linalg.norm(system.A_bar.rmatvec(system.b_bar)))
        flops.add(2 * system.A_bar.nnz + n)
        return RidgeGrcdState(option, x, g, scale=scale)
    y = np.zeros(n) if y0 is None else np.asarray(y0, dtype=float).copy()
    x = system.A_bar.rmatvec(y) / system.sqrt_lam
    flops.add(system.A_bar.nnz + d)
    return RidgeGrcdState(option, x, y, scale=system.sqrt_lam * float(np.linalg.norm(system.b_bar)))


def ridge_grcd_step(state: RidgeGrcdState, system: AugmentedSystem, S: SketchSample,
                    zero_threshold: float = EPS, flops: FlopCounter = NULL_COUNTER) -> RidgeGrcdState:
    """Exact line search along ``S w`` with stepsize ``||w||^2 / (||B S w||^2 + lam ||S w||^2)``.

    ``B`` is ``A`` for Option I and ``A^T`` for Option II.  Mutates the state.
    """
    st = state
    if st.option is RidgeOption.I:
        w, z, Bz = _option1_direction(system, S, st.x, st.aux, zero_threshold, st.scale, st.k, flops)
    else:
        w, z, Bz = _option2_direction(system, S, st.x, st.aux, zero_threshold, st.scale, st.k, flops)
    ww = float(w @ w)
    den = Bz.norm_sq() + system.lam * z.norm_sq()
    flops.add(w.shape[0] + Bz.nnz + z.nnz)
    st.k += 1
    if ww == 0.0 or den == 0.0:
        return st
    alpha = ww / den
    if st.option is RidgeOption.I:
        z.add_into(st.x, alpha)
        Bz.add_into(st.aux, -alpha)
    else:
        z.add_into(st.aux, alpha)
        Bz.add_into(st.x, alpha / system.sqrt_lam)
    flops.add(z.nnz + Bz.nnz)
    return st


# ---------------------------------------------------------------------------
# plain Kaczmarz on the augmented system
# ---------------------------------------------------------------------------


def rk_augmented_step(system: AugmentedSystem, x_hat: np.ndarray, i: int) -> np.ndarray:
    """Kaczmarz projection of ``x_hat`` onto row ``i`` of ``A_hat x_hat = b_hat``."""
    a = system.a_hat_row(i)
    step = (system.b_hat[i] - float(a @ x_hat)) / float(a @ a)
    return x_hat + step * a


# ---------------------------------------------------------------------------
# runner
# ---------------------------------------------------------------------------


def ridge_gradient_norm(system: AugmentedSystem, x: np.ndarray) -> float:
    """``||A^T (b - A x) - lam x||``."""
    g = system.b_bar - system.A_bar.matvec(x)
    return float(np.linalg.norm(system.A_bar.rmatvec(g) - system.lam * x))


def run_ridge(problem: Union[RidgeProblem, AugmentedSystem], method: str, dist: SketchDistribution, stop: StopRule,
              option="auto", rng: Optional[np.random.Generator] = None, trace: Optional[Callable] = None,
              x0: Optional[np.ndarray] = None, y0: Optional[np.ndarray] = None,
              x_star: Optional[np.ndarray] = None, flops: Optional[FlopCounter] = None) -> SolveResult:
    """Run a ridge engine.

    ``option`` is ``"auto"`` (select_option with both access modes), ``1`` or
    ``2``.  Option II starts from ``y0`` (default zero); its ``x0`` is
    ``A^T y0 / sqrt(lam)`` and passing ``x0`` is an error.  The gradient
    tolerance applies to ``||A^T (b - A x) - lam x||``.
    """
    if method not in RIDGE_METHODS:
        raise ValueError(f"unknown ridge method {method!r}; expected one of {RIDGE_METHODS}")
    system = problem if isinstance(problem, AugmentedSystem) else build_augmented(problem)
    n, d = system.shape
    opt = select_option(n, d) if option == "auto" else _as_option(option)
    dim = d if opt is RidgeOption.I else n
    if dist.ambient_dim != dim:
        raise ValueError(f"Option {opt.name} sketches in dimension {dim}, distribution has {dist.ambient_dim}")
    if opt is RidgeOption.II and x0 is not None:
        raise ValueError("Option II starts from y0; x0 is implied")
    if opt is RidgeOption.I and y0 is not None:
        raise ValueError("Option I starts from x0")
    flops = FlopCounter() if flops is None else flops
    rng = np.random.default_rng() if rng is None else rng
    thr = stop.zero_threshold

    if opt is RidgeOption.I:
        x_init = np.zeros(d) if x0 is None else np.asarray(x0, dtype=float)
    else:
        y_init = np.zeros(n) if y0 is None else np.asarray(y0, dtype=float)
        x_init = system.A_bar.rmatvec(y_init) / system.sqrt_lam

    def grad_norm(x):
        return ridge_gradient_norm(system, x)

    if stop.max_iterations == 0:
        return SolveResult(x_init.copy(), [], "max_iterations", 0, flops.total)

    if method == "ridge-rcgls":
        if opt is RidgeOption.I:
            box = [ridge_option1_init(system, draw(dist, rng), x_init, thr, flops)]
            step = ridge_option1_step
        else:
            box = [ridge_option2_init(system, draw(dist, rng), y_init, thr, flops)]
            step = ridge_option2_step

        def advance():
            box[0] = step(box[0], system, draw(dist, rng), thr, flops)

        return drive(advance, lambda: box[0].x, grad_norm, x_init, stop, x_star, flops, trace,
                     lambda: box[0].rescues)

    if method == "ridge-grcd":
        st = ridge_grcd_init(system, opt, x_init if opt is RidgeOption.I else None,
                             y_init if opt is RidgeOption.II else None, flops)

        def advance():
            ridge_grcd_step(st, system, draw(dist, rng), thr, flops)

        return drive(advance, lambda: st.x, grad_norm, x_init, stop, x_star, flops, trace)

    op = system.V if opt is RidgeOption.I else system.U
    start = x_init if opt is RidgeOption.I else y_init
    est = efficient_init(op, system.b_hat, start, draw(dist, rng), thr, flops)

    def advance():
        efficient_rcgls_step(est, op, draw(dist, rng), thr, flops)

    if opt is RidgeOption.I:
        current = lambda: efficient_solution(est)  # noqa: E731
    else:
        current = lambda: system.A_bar.rmatvec(efficient_solution(est)) / system.sqrt_lam  # noqa: E731
    return drive(advance, current, grad_norm, x_init, stop, x_star, flops, trace, lambda: est.rescues)
