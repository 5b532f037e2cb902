"""Convergence factors, per-step gamma values and a Monte-Carlo check of the
expected decrease of RCGLS.

For a sketch law with ``M = E[S S^T / ||A S||_2^2]`` one RCGLS step satisfies

    E ||x+ - x*||_{A^T A}^2 <= (1 - gamma * s) ||x - x*||_{A^T A}^2,

with ``s = sigma_min(A M^{1/2})^2`` and ``gamma >= 1``.  Taking ``gamma = 1``
gives the GRCD factor; coordinate weighting turns it into the RCD factor
``1 - sigma_min(A)^2 / ||A||_F^2``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.linalg

from .linalg import RANK_CUTOFF, as_operator, direct_oracle, to_dense
from .sketching import SketchDistribution, SketchSample, draw, m_matrix, sketch_block
from .solvers import EPS, RcglsState, direction_cutoff, rcgls_init, rcgls_step, sketched_direction


@dataclass
class RateReport:
    m_matrix: np.ndarray
    sigma_min_sq: float
    grcd_factor: float
    gamma_samples: list = field(default_factory=list)
    empirical_ratios: list = field(default_factory=list)
    m_samples: Optional[int] = None  # Monte-Carlo count behind M, None when exact

    @property
    def gamma_min(self) -> float:
        return min(self.gamma_samples) if self.gamma_samples else math.nan

    def rcgls_factors(self) -> np.ndarray:
        """``1 - gamma * sigma_min_sq`` for every recorded gamma."""
        return 1.0 - np.asarray(self.gamma_samples, dtype=float) * self.sigma_min_sq


def _smallest_nonzero_sv_sq(B: np.ndarray, cutoff: float = RANK_CUTOFF) -> float:
    s = np.linalg.svd(B, compute_uv=False)
    if s.size == 0 or s[0] == 0:
        raise ValueError("matrix is zero")
    kept = s[s > cutoff * s[0]]
    return float(kept[-1] ** 2)


def _sqrtm_psd(M: np.ndarray) -> np.ndarray:
    w, Q = scipy.linalg.eigh((M + M.T) / 2)
    return (Q * np.sqrt(np.clip(w, 0.0, None))) @ Q.T


def sigma_min_sq(A, M: np.ndarray, cutoff: float = RANK_CUTOFF) -> float:
    """``sigma_min(A M^{1/2})^2`` over singular values above ``cutoff * sigma_max``."""
    w = np.linalg.eigvalsh((M + M.T) / 2)
    if w[-1] <= 0 or w[0] <= cutoff * w[-1]:
        raise ValueError("M is numerically singular: E[S S^T] must be positive definite")
    return _smallest_nonzero_sv_sq(to_dense(as_operator(A).matrix) @ _sqrtm_psd(M), cutoff)


def contraction_factor(A, dist: SketchDistribution, num_samples: int = 10_000,
                       rng: Optional[np.random.Generator] = None) -> float:
    """``1 - sigma_min(A M^{1/2})^2``, the GRCD factor of the sketch law."""
    return 1.0 - sigma_min_sq(A, m_matrix(dist, A, num_samples, rng))


def rcd_factor(A) -> float:
    """``1 - sigma_min(A)^2 / ||A||_F^2`` with the smallest nonzero singular value."""
    Ad = to_dense(as_operator(A).matrix)
    return 1.0 - _smallest_nonzero_sv_sq(Ad) / float(np.sum(Ad * Ad))


def gamma_sample(A, S: SketchSample, r, p_prev=None) -> float:
    """Per-step gamma for the sketch ``S`` at residual ``r`` and previous direction.

    ``(1 - c^2)^{-1}`` where ``c`` is the ``A^T A``-cosine between ``S S^T A^T r``
    and ``p_prev``; ``0/0 = 0`` inside ``c`` and ``inf`` when ``1 - c^2``
    vanishes.  Without ``p_prev`` (first step) the value is 1.
    """
    if p_prev is None:
        return 1.0
    op = as_operator(A)
    block = sketch_block(op, S)
    s = block.rdot(np.asarray(r, dtype=float))
    Az = block.combine(s).to_dense()
    Ap = op.matvec(np.asarray(p_prev, dtype=float))
    num = float(Az @ Ap) ** 2
    den = float(Az @ Az) * float(Ap @ Ap)
    c2 = num / den if den > 0 else 0.0
    gap = 1.0 - c2
    if gap <= EPS:
        return math.inf
    return 1.0 / gap


def _energy(op, e) -> float:
    Ae = op.matvec(e)
    return float(Ae @ Ae)


@dataclass
class DecreaseCheck:
    lhs: float  # Monte-Carlo mean of ||x+ - x*||^2_{A^T A}
    rhs: float  # (1 - sigma_min_sq) ||x - x*||^2_{A^T A}
    standard_error: float
    num_samples: int

    def holds(self, z: float = 3.0) -> bool:
        return self.lhs <= self.rhs + z * self.standard_error


def verify_expected_decrease(A, b, x_star, state: RcglsState, dist: SketchDistribution, num_samples: int = 10_000,
                             rng: Optional[np.random.Generator] = None, zero_threshold: float = EPS,
                             factor: Optional[float] = None) -> DecreaseCheck:
    """Conditional expectation of one RCGLS step from a frozen state.

    ``state.x``, ``state.r`` and the previous direction (``state.p_prev``,
    ``state.v_prev``; absent at ``k = 0``) are held fixed; the sketch that
    builds the current direction is redrawn ``num_samples`` times.
    ``factor`` defaults to :func:`contraction_factor`.
    """
    if num_samples < 2:
        raise ValueError("need at least two samples for a standard error")
    op = as_operator(A)
    rng = np.random.default_rng() if rng is None else rng
    x_star = np.asarray(x_star, dtype=float)
    if factor is None:
        factor = contraction_factor(op, dist, rng=rng)
    e0 = _energy(op, state.x - x_star)
    vv_prev = None if state.v_prev is None else float(state.v_prev @ state.v_prev)
    vals = np.empty(num_samples)
    for t in range(num_samples):
        S = draw(dist, rng)
        p, v, _, ssq = sketched_direction(op, S, state.r, state.p_prev, state.v_prev, vv_prev,
                                          cutoff=direction_cutoff(op, S, zero_threshold, state.scale,
                                                                  state.bnorm, state.k))
        vv = float(v @ v)
        mu = ssq / vv if vv > 0 and ssq > 0 else 0.0
        vals[t] = _energy(op, state.x + mu * p - x_star)
    lhs = float(vals.mean())
    se = float(vals.std(ddof=1) / math.sqrt(num_samples))
    return DecreaseCheck(lhs, factor * e0, se, num_samples)


def advance_state(A, b, dist: SketchDistribution, steps: int, rng: np.random.Generator,
                  zero_threshold: float = EPS) -> RcglsState:
    """RCGLS state after ``steps`` iterations, ready for a frozen-state check.

    The returned state's ``x``, ``r``, ``p_prev``, ``v_prev`` describe the
    start of step ``steps``; its ``p`` (built from one sketch) is ignored by
    :func:`verify_expected_decrease`.
    """
    op = as_operator(A)
    st = rcgls_init(op, b, None, draw(dist, rng), zero_threshold=zero_threshold)
    for _ in range(steps):
        st = rcgls_step(st, op, draw(dist, rng), zero_threshold)
    return st


def rate_report(A, b, dist: SketchDistribution, steps: int = 50, rng: Optional[np.random.Generator] = None,
                x_star: Optional[np.ndarray] = None, num_samples: int = 10_000) -> RateReport:
    """GRCD factor of ``dist`` plus realized gammas and decrease ratios along one RCGLS run."""
    op = as_operator(A)
    rng = np.random.default_rng() if rng is None else rng
    M, count = m_matrix(dist, op, num_samples, rng, return_count=True)
    s2 = sigma_min_sq(op, M)
    if x_star is None:
        x_star = direct_oracle(op.matrix, b).x_star
    report = RateReport(M, s2, 1.0 - s2, m_samples=count)
    S = draw(dist, rng)
    st = rcgls_init(op, b, None, S)
    report.gamma_samples.append(gamma_sample(op, S, st.r, None))
    for _ in range(steps):
        e_before = _energy(op, st.x - x_star)
        S = draw(dist, rng)
        nxt = rcgls_step(st, op, S)
        e_after = _energy(op, nxt.x - x_star)
        if e_before > 0:
            report.empirical_ratios.append(e_after / e_before)
        report.gamma_samples.append(gamma_sample(op, S, nxt.r, st.p))
        st = nxt
    return report
