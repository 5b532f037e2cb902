"""Iteration engines for least squares: CGLS, GRCD, RCGLS and its efficient form.

All engines follow the same conventions:

* a ratio whose denominator vanishes is read as ``0/0 = 0`` and the
  corresponding step is a no-op;
* the optional ``flops`` argument is a :class:`~rcgls.flops.FlopCounter`
  receiving multiply-add counts per the accounting rule in :mod:`rcgls.flops`;
* a sketched gradient ``S^T A^T r`` whose norm is at most
  ``zero_threshold * ||A^T b||`` is treated as zero.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .flops import NULL_COUNTER, FlopCounter
from .linalg import ColumnOperator, ProblemInstance, as_operator
from .sketching import (SketchDistribution, SketchSample, draw, sketch_apply, sketch_apply_transpose, sketch_block,
                        sketched_frobenius_sq)

logger = logging.getLogger(__name__)

EPS = float(np.finfo(float).eps)

METHODS = ("cgls", "rcgls", "rcgls-efficient", "grcd")

# growth of |theta| tolerated before the efficient engine re-anchors
ANCHOR_GROWTH = 1e2
# q is renormalised when |theta| leaves this range
THETA_RANGE = (1e-100, 1e100)
# a conjugate direction needs a sketched gradient well above its rounding floor; every conjugate
# engine applies this margin so that mathematically equivalent engines take the same zero decisions
NOISE_MARGIN = ANCHOR_GROWTH


@dataclass
class StopRule:
    max_iterations: Optional[int] = 1000
    rse_tolerance: Optional[float] = None
    gradient_tolerance: Optional[float] = None
    zero_threshold: float = EPS

    def __post_init__(self):
        if self.max_iterations is None and self.rse_tolerance is None and self.gradient_tolerance is None:
            raise ValueError("at least one stopping criterion must be enabled")
        if self.max_iterations is not None and self.max_iterations < 0:
            raise ValueError("max_iterations must be nonnegative")


@dataclass
class TraceRecord:
    k: int
    rse: float
    grad_norm: float
    flops: int
    wall_time: float


@dataclass
class SolveResult:
    x: np.ndarray
    trace: list
    reason: str
    iterations: int
    flops: int
    rescues: int = 0


# ---------------------------------------------------------------------------
# CGLS and RCGLS
# ---------------------------------------------------------------------------


@dataclass
class RcglsState:
    x: np.ndarray
    r: np.ndarray
    p: np.ndarray
    v: np.ndarray
    mu: float = 0.0
    tau: float = 0.0
    k: int = 0
    sketch_sq: float = 0.0  # ||S_k^T A^T r^k||^2 for the sketch that built p
    scale: float = 1.0  # ||A^T b||, reference for the zero test
    p_prev: Optional[np.ndarray] = None
    v_prev: Optional[np.ndarray] = None
    bnorm: float = 0.0


def noise_cutoff(op: ColumnOperator, S: SketchSample, zero_threshold: float, scale: float,
                 magnitude: float, k: int) -> float:
    """Zero-test cutoff for a sketched gradient.

    Besides ``zero_threshold * scale``, the recurrences carry rounding that
    grows like ``sqrt(k)``; a sketched gradient below
    ``zero_threshold * ||A S||_F * magnitude * sqrt(k + 1)`` is noise.
    """
    floor = math.sqrt(sketched_frobenius_sq(S, op.col_sq_norms)) * magnitude * math.sqrt(k + 1)
    return zero_threshold * max(scale, floor)


def direction_cutoff(op: ColumnOperator, S: SketchSample, zero_threshold: float, scale: float,
                     magnitude: float, k: int) -> float:
    """:func:`noise_cutoff` with :data:`NOISE_MARGIN`, for engines that build conjugate directions."""
    return noise_cutoff(op, S, zero_threshold, scale, NOISE_MARGIN * magnitude, k)


def _gradient_cutoff(op: ColumnOperator, zero_threshold: float, scale: float, bnorm: float, k: int) -> float:
    """:func:`direction_cutoff` for the full gradient (``S = I``)."""
    floor = math.sqrt(float(op.col_sq_norms.sum())) * NOISE_MARGIN * bnorm * math.sqrt(k + 1)
    return zero_threshold * max(scale, floor)


def cgls_init(A, b, x0=None, flops: FlopCounter = NULL_COUNTER, zero_threshold: float = EPS) -> RcglsState:
    """``r = b - A x0``, ``p = A^T r``, ``v = A p``."""
    op = as_operator(A)
    n, d = op.shape
    b = np.asarray(b, dtype=float)
    x0 = np.zeros(d) if x0 is None else np.asarray(x0, dtype=float).copy()
    r = b - op.matvec(x0)
    p = op.rmatvec(r)
    scale = float(np.linalg.norm(op.rmatvec(b)))
    bnorm = float(np.linalg.norm(b))
    if math.sqrt(float(p @ p)) <= _gradient_cutoff(op, zero_threshold, scale, bnorm, 0):
        p = np.zeros(d)
    v = op.matvec(p)
    flops.add(4 * op.nnz + n + d)
    return RcglsState(x0, r, p, v, sketch_sq=float(p @ p), scale=scale, bnorm=bnorm)


def cgls_step(state: RcglsState, A, flops: FlopCounter = NULL_COUNTER, zero_threshold: float = EPS) -> RcglsState:
    """Classical CGLS update with the exact-line-search conjugacy coefficient.

    ``mu = ||A^T r||^2/||Ap||^2`` (equal to ``<r, Ap>/||Ap||^2`` in exact
    arithmetic, and stable once ``A^T r`` reaches rounding level),
    ``tau = -<A A^T r+, Ap>/||Ap||^2``.  A gradient at rounding level is
    treated as zero, which ends the iteration as in exact arithmetic.
    """
    op = as_operator(A)
    n, d = op.shape
    x, r, p, v = state.x, state.r, state.p, state.v
    vv = float(v @ v)
    if vv == 0.0:
        return RcglsState(x, r, p, v, 0.0, 0.0, state.k + 1, state.sketch_sq, state.scale, p, v, state.bnorm)
    mu = state.sketch_sq / vv
    x_new = x + mu * p
    r_new = r - mu * v
    g = op.rmatvec(r_new)
    if math.sqrt(float(g @ g)) <= _gradient_cutoff(op, zero_threshold, state.scale, state.bnorm, state.k + 1):
        g = np.zeros(d)
    Ag = op.matvec(g)
    tau = -float(Ag @ v) / vv
    p_new = g + tau * p
    v_new = Ag + tau * v
    flops.add(2 * op.nnz + 5 * n + 2 * d + d)
    return RcglsState(x_new, r_new, p_new, v_new, mu, tau, state.k + 1, float(g @ g), state.scale, p, v,
                      state.bnorm)


def sketched_direction(op: ColumnOperator, S: SketchSample, r, p_prev=None, v_prev=None,
                       vv_prev: Optional[float] = None, flops: FlopCounter = NULL_COUNTER,
                       cutoff: float = 0.0):
    """New direction ``p = S S^T A^T r + tau p_prev`` conjugate to ``p_prev``.

    Returns ``(p, v, tau, ||S^T A^T r||^2)`` with ``v = A p``.  ``vv_prev``
    is ``||v_prev||^2`` when the caller already has it.  A sketched gradient
    of norm at most ``cutoff`` is replaced by zero, which makes ``tau = 0``
    and the whole direction vanish.
    """
    n, d = op.shape
    block = sketch_block(op, S)
    s = block.rdot(r)
    if math.sqrt(float(s @ s)) <= cutoff:
        s = np.zeros_like(s)
    z = sketch_apply(S, s).to_dense()
    Az = block.combine(s).to_dense()
    flops.add(2 * block.nnz + s.shape[0])
    if v_prev is None:
        return z, Az, 0.0, float(s @ s)
    if vv_prev is None:
        vv_prev = float(v_prev @ v_prev)
        flops.add(n)
    tau = -float(Az @ v_prev) / vv_prev if vv_prev > 0 else 0.0
    p = z + tau * p_prev
    v = Az + tau * v_prev
    flops.add(2 * n + d)
    return p, v, tau, float(s @ s)


def rcgls_init(A, b, x0, S0: SketchSample, flops: FlopCounter = NULL_COUNTER,
               zero_threshold: float = EPS) -> RcglsState:
    """``r0 = b - A x0``, ``p0 = S0 S0^T A^T r0``, ``v0 = A p0``."""
    op = as_operator(A)
    n, d = op.shape
    b = np.asarray(b, dtype=float)
    if b.shape != (n,):
        raise ValueError(f"b must have length {n}")
    x0 = np.zeros(d) if x0 is None else np.asarray(x0, dtype=float).copy()
    if x0.shape != (d,):
        raise ValueError(f"x0 must have length {d}")
    r = b - op.matvec(x0)
    flops.add(op.nnz + n)
    scale = float(np.linalg.norm(op.rmatvec(b)))
    bnorm = float(np.linalg.norm(b))
    flops.add(op.nnz + S0.q)
    p, v, _, ssq = sketched_direction(op, S0, r, flops=flops,
                                      cutoff=direction_cutoff(op, S0, zero_threshold, scale, bnorm, 0))
    return RcglsState(x0, r, p, v, sketch_sq=ssq, scale=scale, bnorm=bnorm)


def rcgls_stepsize(state: RcglsState, zero_threshold: float = EPS, vv: Optional[float] = None) -> float:
    """``mu_k = ||S_k^T A^T r^k||^2 / ||v^k||^2`` with the zero test applied."""
    if vv is None:
        vv = float(state.v @ state.v)
    if vv == 0.0 or math.sqrt(state.sketch_sq) <= zero_threshold * state.scale:
        return 0.0
    return state.sketch_sq / vv


def rcgls_step(state: RcglsState, A, S_next: SketchSample, zero_threshold: float = EPS,
               flops: FlopCounter = NULL_COUNTER) -> RcglsState:
    """One RCGLS iteration: line search along ``p^k``, then the new direction from ``S_next``."""
    op = as_operator(A)
    n, d = op.shape
    vv = float(state.v @ state.v)
    mu = rcgls_stepsize(state, zero_threshold, vv)
    x = state.x + mu * state.p
    r = state.r - mu * state.v
    flops.add(n + d + n)
    cutoff = direction_cutoff(op, S_next, zero_threshold, state.scale, state.bnorm, state.k + 1)
    flops.add(S_next.q)
    p, v, tau, ssq = sketched_direction(op, S_next, r, state.p, state.v, vv, flops, cutoff)
    return RcglsState(x, r, p, v, mu, tau, state.k + 1, ssq, state.scale, state.p, state.v, state.bnorm)


def grcd_step(x, r, A, S: SketchSample, zero_threshold: float = EPS, scale: float = 1.0,
              flops: FlopCounter = NULL_COUNTER, magnitude: float = 0.0, k: int = 0):
    """Exact-line-search step along ``S S^T A^T r``; updates ``x`` and ``r`` in place.

    The zero test is :func:`noise_cutoff` with ``magnitude`` (typically
    ``||b||``) and the iteration count ``k``.
    """
    op = as_operator(A)
    block = sketch_block(op, S)
    s = block.rdot(r)
    ssq = float(s @ s)
    flops.add(block.nnz + s.shape[0] + S.q)
    if math.sqrt(ssq) <= noise_cutoff(op, S, zero_threshold, scale, magnitude, k):
        return x, r
    Az = block.combine(s)
    den = Az.norm_sq()
    flops.add(block.nnz + Az.nnz)
    if den == 0.0:
        return x, r
    alpha = ssq / den
    sketch_apply(S, s).add_into(x, alpha)
    Az.add_into(r, -alpha)
    flops.add(s.shape[0] + Az.nnz)
    return x, r


# ---------------------------------------------------------------------------
# efficient RCGLS
# ---------------------------------------------------------------------------


@dataclass
class EfficientState:
    h: np.ndarray
    h_star: np.ndarray
    q_vec: np.ndarray
    q_star: np.ndarray
    Atb: np.ndarray
    delta: float = 0.0
    delta_star: float = 0.0
    theta: float = 1.0
    l: float = 0.0
    d1: np.ndarray = field(default_factory=lambda: np.zeros(0))
    eta: float = 0.0
    k: int = 0
    scale: float = 1.0
    branch: str = "init"
    rescues: int = 0
    anchors: int = 0
    renorms: int = 0
    bnorm: float = 0.0
    growth: float = 1.0
    theta_floor: float = 1.0


def efficient_init(A, b, x0, S0: SketchSample, zero_threshold: float = EPS,
                   flops: FlopCounter = NULL_COUNTER) -> EfficientState:
    op = as_operator(A)
    n, d = op.shape
    b = np.asarray(b, dtype=float)
    x0 = np.zeros(d) if x0 is None else np.asarray(x0, dtype=float).copy()
    Atb = op.rmatvec(b)
    h_star = op.matvec(x0)
    flops.add(2 * op.nnz)
    scale = float(np.linalg.norm(Atb))
    block = sketch_block(op, S0)
    d1 = sketch_apply_transpose(S0, Atb) - block.rdot(h_star)
    nd1 = float(d1 @ d1)
    flops.add(block.nnz + 2 * d1.shape[0])
    q_vec = np.zeros(d)
    q_star = np.zeros(n)
    theta = 1.0
    bnorm = float(np.linalg.norm(b))
    flops.add(S0.q)
    if math.sqrt(nd1) > direction_cutoff(op, S0, zero_threshold, scale, bnorm, 0):
        scaled = d1 / nd1
        sketch_apply(S0, scaled).add_into(q_vec)
        block.combine(scaled).add_into(q_star)
        theta = 1.0 / nd1
        flops.add(block.nnz + d1.shape[0])
    l = float(q_star @ q_star)
    flops.add(n)
    return EfficientState(x0, h_star, q_vec, q_star, Atb, theta=theta, l=l, d1=d1, scale=scale,
                          theta_floor=abs(theta), bnorm=bnorm)


def _fold(st: EfficientState, delta: float) -> int:
    """``h += delta q``, ``h* += delta q*``; returns the multiply-adds on the supports."""
    cost = np.count_nonzero(st.q_vec) + np.count_nonzero(st.q_star)
    st.h += delta * st.q_vec
    st.h_star += delta * st.q_star
    return int(cost)


def _support_scale(v: np.ndarray, c: float) -> int:
    v *= c
    return int(np.count_nonzero(v))


def efficient_rcgls_step(state: EfficientState, A, S_next: SketchSample, zero_threshold: float = EPS,
                         flops: FlopCounter = NULL_COUNTER,
                         anchor_growth: Optional[float] = ANCHOR_GROWTH) -> EfficientState:
    """One iteration of the variable-transformed RCGLS; mutates and returns ``state``.

    Only entries in the support of ``S_next d1`` and ``A S_next d1`` are read or
    written, except on the reset branch, on a rescue of ``l`` and on a
    re-anchoring.

    The scale ``theta`` grows like ``prod 1/|tau|``, so ``h`` and ``delta* q``
    grow with it and cancel when the iterate is recovered.  When the new
    ``|theta|`` would exceed ``anchor_growth`` times its smallest value since
    the last anchor, the step is taken in anchored form instead: ``h`` becomes
    the iterate itself and ``delta* = 0``.  This is the same iteration in
    exact arithmetic and costs one pass over the supports of ``q`` and ``q*``.  ``anchor_growth=None`` gives
    the literal recurrence.
    """
    op = as_operator(A)
    n, d = op.shape
    st = state
    nd1 = float(st.d1 @ st.d1)
    flops.add(st.d1.shape[0])
    if st.l <= 0.0 or math.sqrt(nd1) <= zero_threshold * st.scale:
        eta = 0.0
    else:
        eta = st.theta * nd1 / st.l
    delta = st.delta_star + eta

    block = sketch_block(op, S_next)
    d1 = sketch_apply_transpose(S_next, st.Atb) - block.rdot(st.h_star) - delta * block.rdot(st.q_star)
    # d1 is a recomputed residual: its noise also scales with delta q* and, beyond the shared
    # margin, with any unanchored growth of theta
    magnitude = (st.bnorm + abs(delta) * math.sqrt(max(st.l, 0.0))) * max(1.0, st.growth / NOISE_MARGIN)
    flops.add(S_next.q)
    if math.sqrt(float(d1 @ d1)) <= direction_cutoff(op, S_next, zero_threshold, st.scale, magnitude, st.k + 1):
        d1 = np.zeros_like(d1)
    dvec = sketch_apply(S_next, d1)
    d2 = block.combine(d1)
    ip = d2.dot(st.q_star)
    d2sq = d2.norm_sq()
    flops.add(3 * block.nnz + 2 * d1.shape[0] + 2 * d2.nnz)

    if abs(ip) > zero_threshold * math.sqrt(d2sq * st.l) and ip != 0.0:
        theta = -st.l / ip
        ratio = abs(theta) / st.theta_floor
        st.growth = max(st.growth, min(ratio, anchor_growth or math.inf))
        if anchor_growth is not None and ratio > anchor_growth:
            # same step written as h <- x^{k+1}, delta* <- 0
            flops.add(_fold(st, delta))
            st.delta_star = 0.0
            st.theta_floor = abs(theta)
            st.anchors += 1
            st.branch = "anchor"
        else:
            dvec.add_into(st.h, -delta * theta)
            d2.add_into(st.h_star, -delta * theta)
            flops.add(dvec.nnz + d2.nnz)
            st.delta_star = delta
            st.theta_floor = min(st.theta_floor, abs(theta))
            st.branch = "conjugate"
        dvec.add_into(st.q_vec, theta)
        d2.add_into(st.q_star, theta)
        flops.add(dvec.nnz + d2.nnz)
        l = theta * theta * d2sq - st.l
        if l <= 0.0:
            l = float(st.q_star @ st.q_star)
            flops.add(n)
            st.rescues += 1
            logger.info("efficient RCGLS: l lost positivity at k=%d, recomputed ||q*||^2", st.k)
    else:
        theta = 1.0
        flops.add(_fold(st, delta))
        st.q_vec = dvec.to_dense()
        st.q_star = d2.to_dense()
        l = d2sq
        st.delta_star = 0.0
        st.theta_floor = 1.0
        st.branch = "reset"
    if not THETA_RANGE[0] < abs(theta) < THETA_RANGE[1]:
        c = 1.0 / abs(theta)
        flops.add(_support_scale(st.q_vec, c) + _support_scale(st.q_star, c))
        theta *= c
        l *= c * c
        st.delta_star /= c
        st.theta_floor *= c
        st.renorms += 1
    st.eta = eta
    st.delta = delta
    st.theta = theta
    st.l = l
    st.d1 = d1
    st.k += 1
    return st


def efficient_solution(state: EfficientState) -> np.ndarray:
    """Current iterate ``h + delta* q`` (one full-dimension combine)."""
    return state.h + state.delta_star * state.q_vec


# ---------------------------------------------------------------------------
# runner
# ---------------------------------------------------------------------------


def compute_rse(x, x0, x_star) -> float:
    """Relative solution error ``||x - x*||^2 / ||x0 - x*||^2``."""
    den = float(np.sum((np.asarray(x0) - x_star) ** 2))
    if den == 0.0:
        raise ValueError("RSE undefined: x0 equals x_star")
    return float(np.sum((np.asarray(x) - x_star) ** 2)) / den


def drive(advance: Callable[[], None], current_x: Callable[[], np.ndarray],
          grad_norm: Callable[[np.ndarray], float], x0: np.ndarray, stop: StopRule,
          x_star: Optional[np.ndarray], flops: FlopCounter,
          trace: Optional[Callable[[TraceRecord], None]] = None,
          rescues: Callable[[], int] = lambda: 0) -> SolveResult:
    """Generic iteration loop shared by every engine.

    ``advance`` performs one iteration; time spent there is the wall time
    reported.  RSE and gradient evaluations are instrumentation and are
    neither timed nor counted as flops.
    """
    if stop.rse_tolerance is not None and x_star is None:
        raise ValueError("RSE stopping needs x_star")
    need_grad = stop.gradient_tolerance is not None
    records = []
    elapsed = 0.0
    k = 0
    reason = "max_iterations"
    x = x0
    if need_grad and grad_norm(x) <= stop.gradient_tolerance:
        return SolveResult(x.copy(), records, "gradient_tolerance", 0, flops.total, rescues())
    while stop.max_iterations is None or k < stop.max_iterations:
        t0 = time.perf_counter()
        advance()
        elapsed += time.perf_counter() - t0
        k += 1
        x = current_x()
        rse = compute_rse(x, x0, x_star) if x_star is not None else math.nan
        g = grad_norm(x) if need_grad else math.nan
        rec = TraceRecord(k, rse, g, flops.total, elapsed)
        records.append(rec)
        if trace is not None:
            trace(rec)
        if not np.all(np.isfinite(x)):
            reason = "diverged"
            break
        if stop.rse_tolerance is not None and rse < stop.rse_tolerance:
            reason = "rse_tolerance"
            break
        if need_grad and g <= stop.gradient_tolerance:
            reason = "gradient_tolerance"
            break
    return SolveResult(np.array(x, copy=True), records, reason, k, flops.total, rescues())


def run_solver(problem: ProblemInstance, method: str, dist: Optional[SketchDistribution], stop: StopRule,
               rng: Optional[np.random.Generator] = None, trace: Optional[Callable] = None,
               x0: Optional[np.ndarray] = None, x_star: Optional[np.ndarray] = None,
               flops: Optional[FlopCounter] = None) -> SolveResult:
    """Run one least-squares engine under a stopping rule.

    ``method`` is one of ``cgls``, ``rcgls``, ``rcgls-efficient``, ``grcd``.
    The gradient tolerance is absolute on ``||A^T (b - A x)||``.
    """
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")
    op = as_operator(problem.A)
    b = problem.b
    n, d = op.shape
    x0 = np.zeros(d) if x0 is None else np.asarray(x0, dtype=float)
    flops = FlopCounter() if flops is None else flops
    rng = np.random.default_rng() if rng is None else rng
    thr = stop.zero_threshold
    if method != "cgls" and dist is None:
        raise ValueError(f"method {method} needs a sketch distribution")
    if dist is not None and method != "cgls" and dist.ambient_dim != d:
        raise ValueError("distribution dimension does not match the column count")

    def grad_norm(x):
        return float(np.linalg.norm(op.rmatvec(b - op.matvec(x))))

    if stop.max_iterations == 0:
        return SolveResult(x0.copy(), [], "max_iterations", 0, flops.total)

    if method == "cgls":
        box = [cgls_init(op, b, x0, flops, thr)]

        def advance():
            box[0] = cgls_step(box[0], op, flops, thr)

        return drive(advance, lambda: box[0].x, grad_norm, x0, stop, x_star, flops, trace)

    if method == "rcgls":
        box = [rcgls_init(op, b, x0, draw(dist, rng), flops)]

        def advance():
            box[0] = rcgls_step(box[0], op, draw(dist, rng), thr, flops)

        return drive(advance, lambda: box[0].x, grad_norm, x0, stop, x_star, flops, trace)

    if method == "rcgls-efficient":
        state = efficient_init(op, b, x0, draw(dist, rng), thr, flops)

        def advance():
            efficient_rcgls_step(state, op, draw(dist, rng), thr, flops)

        return drive(advance, lambda: efficient_solution(state), grad_norm, x0, stop, x_star, flops,
                     trace, lambda: state.rescues)

    x = x0.copy()
    r = b - op.matvec(x)
    scale = float(np.linalg.norm(op.rmatvec(b)))
    flops.add(op.nnz + n)

    bnorm = float(np.linalg.norm(b))
    count = [0]

    def advance():
        grcd_step(x, r, op, draw(dist, rng), thr, scale, flops, bnorm, count[0])
        count[0] += 1

    return drive(advance, lambda: x, grad_norm, x0, stop, x_star, flops, trace)
