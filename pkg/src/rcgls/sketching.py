"""Sketching distributions: sampling, structured application and expectations.

A sketch ``S`` is a ``d x q`` matrix that is never formed for the structured
kinds.  Indices are 0-based throughout.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterator, Optional, Union

import numpy as np

from .linalg import ColumnOperator, SparseVec, as_operator, to_dense


class SketchKind(str, Enum):
    COORD_WEIGHTED = "coord-weighted"
    UNIFORM_BLOCK = "uniform-block"
    IDENTITY = "identity"
    GAUSSIAN = "gaussian"


# ---------------------------------------------------------------------------
# samples
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ScaledCoordinate:
    """``S = scale * e_index``."""

    index: int
    scale: float
    dim: int

    def __post_init__(self):
        if not (0 <= self.index < self.dim):
            raise IndexError(f"coordinate {self.index} out of range [0, {self.dim})")
        if not (np.isfinite(self.scale) and self.scale > 0):
            raise ValueError(f"scale must be finite and positive, got {self.scale}")

    @property
    def q(self) -> int:
        return 1


@dataclass(frozen=True)
class IndexBlock:
    """``S = I[:, indices]`` with the indices stored sorted."""

    indices: np.ndarray
    dim: int

    def __post_init__(self):
        idx = np.sort(np.asarray(self.indices, dtype=np.intp).ravel())
        if idx.size == 0:
            raise ValueError("index block must be nonempty")
        if idx[0] < 0 or idx[-1] >= self.dim:
            raise IndexError(f"block index out of range [0, {self.dim})")
        if np.any(np.diff(idx) == 0):
            raise ValueError("block indices must be distinct")
        object.__setattr__(self, "indices", idx)

    @property
    def q(self) -> int:
        return self.indices.shape[0]


@dataclass(frozen=True)
class Identity:
    dim: int

    @property
    def q(self) -> int:
        return self.dim


@dataclass(frozen=True)
class DenseSketch:
    matrix: np.ndarray

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    @property
    def q(self) -> int:
        return self.matrix.shape[1]


SketchSample = Union[ScaledCoordinate, IndexBlock, Identity, DenseSketch]


# ---------------------------------------------------------------------------
# distributions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SketchDistribution:
    kind: SketchKind
    ambient_dim: int
    q: int = 1
    column_norms: Optional[np.ndarray] = None
    _cdf: Optional[np.ndarray] = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        kind = SketchKind(self.kind)
        object.__setattr__(self, "kind", kind)
        if self.ambient_dim < 1:
            raise ValueError("ambient_dim must be positive")
        if kind is SketchKind.UNIFORM_BLOCK and not (1 <= self.q <= self.ambient_dim):
            raise ValueError(f"block size q={self.q} must lie in [1, {self.ambient_dim}]")
        if kind is SketchKind.GAUSSIAN and self.q < 1:
            raise ValueError("q must be positive")
        if kind is SketchKind.IDENTITY:
            object.__setattr__(self, "q", self.ambient_dim)
        if kind is SketchKind.COORD_WEIGHTED:
            norms = np.asarray(self.column_norms, dtype=float)
            if norms.shape != (self.ambient_dim,):
                raise ValueError("column_norms must have length ambient_dim")
            sq = norms**2
            total = sq.sum()
            if not total > 0:
                raise ValueError("coordinate weighting needs a nonzero matrix")
            cdf = np.cumsum(sq / total)
            cdf[-1] = 1.0
            object.__setattr__(self, "column_norms", norms)
            object.__setattr__(self, "q", 1)
            object.__setattr__(self, "_cdf", cdf)

    @classmethod
    def coordinate_weighted(cls, A) -> "SketchDistribution":
        op = as_operator(A)
        return cls(SketchKind.COORD_WEIGHTED, op.shape[1], 1, np.sqrt(op.col_sq_norms))

    @classmethod
    def uniform_block(cls, m: int, q: int) -> "SketchDistribution":
        return cls(SketchKind.UNIFORM_BLOCK, m, q)

    @classmethod
    def identity(cls, d: int) -> "SketchDistribution":
        return cls(SketchKind.IDENTITY, d, d)

    @classmethod
    def gaussian(cls, d: int, q: int) -> "SketchDistribution":
        return cls(SketchKind.GAUSSIAN, d, q)

    @classmethod
    def from_name(cls, name: str, A, q: int = 1) -> "SketchDistribution":
        """Build a distribution over the columns of ``A`` from a CLI name."""
        op = as_operator(A)
        kind = SketchKind(name)
        d = op.shape[1]
        if kind is SketchKind.COORD_WEIGHTED:
            return cls.coordinate_weighted(op)
        if kind is SketchKind.UNIFORM_BLOCK:
            return cls.uniform_block(d, q)
        if kind is SketchKind.IDENTITY:
            return cls.identity(d)
        return cls.gaussian(d, q)

    @property
    def probabilities(self) -> np.ndarray:
        if self.kind is not SketchKind.COORD_WEIGHTED:
            raise AttributeError("probabilities only defined for coordinate weighting")
        sq = self.column_norms**2
        return sq / sq.sum()

    @property
    def is_discrete(self) -> bool:
        return self.kind is not SketchKind.GAUSSIAN


def draw(dist: SketchDistribution, rng: np.random.Generator) -> SketchSample:
    kind = dist.kind
    if kind is SketchKind.IDENTITY:
        return Identity(dist.ambient_dim)
    if kind is SketchKind.UNIFORM_BLOCK:
        J = rng.choice(dist.ambient_dim, size=dist.q, replace=False)
        return IndexBlock(J, dist.ambient_dim)
    if kind is SketchKind.COORD_WEIGHTED:
        i = int(np.searchsorted(dist._cdf, rng.random(), side="right"))
        i = min(i, dist.ambient_dim - 1)
        # ties in the cdf come from zero columns; searchsorted(right) skips them
        return ScaledCoordinate(i, 1.0 / dist.column_norms[i], dist.ambient_dim)
    return DenseSketch(rng.standard_normal((dist.ambient_dim, dist.q)) / math.sqrt(dist.q))


# ---------------------------------------------------------------------------
# application
# ---------------------------------------------------------------------------


def _check(v, n, what):
    v = np.asarray(v, dtype=float)
    if v.ndim != 1 or v.shape[0] != n:
        raise ValueError(f"{what} must have length {n}, got shape {v.shape}")
    return v


def sketch_apply_transpose(S: SketchSample, v) -> np.ndarray:
    """``S.T @ v``."""
    v = _check(v, S.dim, "v")
    if isinstance(S, ScaledCoordinate):
        return np.array([S.scale * v[S.index]])
    if isinstance(S, IndexBlock):
        return v[S.indices]
    if isinstance(S, Identity):
        return v.copy()
    return S.matrix.T @ v


def sketch_apply(S: SketchSample, w) -> SparseVec:
    """``S @ w`` supported on the sample's index set."""
    w = _check(w, S.q, "w")
    if isinstance(S, ScaledCoordinate):
        return SparseVec(np.array([S.index]), S.scale * w, S.dim)
    if isinstance(S, IndexBlock):
        return SparseVec(S.indices, w.copy(), S.dim)
    if isinstance(S, Identity):
        return SparseVec.dense(w.copy())
    return SparseVec.dense(S.matrix @ w)


class _DenseSketchBlock:
    """``A S`` for a dense sketch, applied through full operator products."""

    def __init__(self, op: ColumnOperator, S: np.ndarray):
        self.op = op
        self.S = S
        self.width = S.shape[1]
        self.n_rows = op.shape[0]

    @property
    def nnz(self) -> int:
        return self.op.nnz + self.S.size

    def rdot(self, v):
        return self.S.T @ self.op.rmatvec(v)

    def combine(self, w):
        return SparseVec.dense(self.op.matvec(self.S @ w))

    def support(self):
        return np.arange(self.n_rows)


def sketch_block(A, S: SketchSample):
    """Block object computing ``S.T A.T v`` (``rdot``) and ``A S w`` (``combine``)."""
    op = as_operator(A)
    if S.dim != op.shape[1]:
        raise ValueError(f"sketch dimension {S.dim} does not match {op.shape[1]} columns")
    if isinstance(S, ScaledCoordinate):
        return op.column_block(np.array([S.index]), np.array([S.scale]))
    if isinstance(S, IndexBlock):
        return op.column_block(S.indices)
    if isinstance(S, Identity):
        return op.column_block(np.arange(S.dim))
    return _DenseSketchBlock(op, S.matrix)


def sketched_frobenius_sq(S: SketchSample, col_sq_norms: np.ndarray) -> float:
    """``||A S||_F^2`` from the squared column norms of ``A`` (exact except for
    dense sketches, where ``sum_j ||A_j||^2 ||S_j||^2`` is returned)."""
    if isinstance(S, ScaledCoordinate):
        return float(col_sq_norms[S.index]) * S.scale ** 2
    if isinstance(S, IndexBlock):
        return float(col_sq_norms[S.indices].sum())
    if isinstance(S, Identity):
        return float(col_sq_norms.sum())
    return float(col_sq_norms @ np.einsum("ij,ij->i", S.matrix, S.matrix))


def sketch_matrix(S: SketchSample) -> np.ndarray:
    """Materialize ``S``; intended for tests and small expectation computations."""
    if isinstance(S, DenseSketch):
        return S.matrix.copy()
    if isinstance(S, Identity):
        return np.eye(S.dim)
    out = np.zeros((S.dim, S.q))
    if isinstance(S, ScaledCoordinate):
        out[S.index, 0] = S.scale
    else:
        out[S.indices, np.arange(S.q)] = 1.0
    return out


# ---------------------------------------------------------------------------
# expectations
# ---------------------------------------------------------------------------

MAX_EXACT_ATOMS = 200_000


def atoms(dist: SketchDistribution) -> Iterator[tuple[float, SketchSample]]:
    """Enumerate ``(probability, sample)`` pairs of a discrete distribution."""
    kind = dist.kind
    if kind is SketchKind.IDENTITY:
        yield 1.0, Identity(dist.ambient_dim)
    elif kind is SketchKind.COORD_WEIGHTED:
        for i, p in enumerate(dist.probabilities):
            if p > 0:
                yield p, ScaledCoordinate(i, 1.0 / dist.column_norms[i], dist.ambient_dim)
    elif kind is SketchKind.UNIFORM_BLOCK:
        count = math.comb(dist.ambient_dim, dist.q)
        if count > MAX_EXACT_ATOMS:
            raise ValueError(f"{count} atoms exceed the exact-enumeration cap {MAX_EXACT_ATOMS}")
        p = 1.0 / count
        for J in itertools.combinations(range(dist.ambient_dim), dist.q):
            yield p, IndexBlock(np.array(J), dist.ambient_dim)
    else:
        raise ValueError("Gaussian sketches have no finite atom set")


def expected_outer(dist: SketchDistribution, num_samples: int = 10_000,
                   rng: Optional[np.random.Generator] = None, return_count: bool = False):
    """``E[S S^T]``: exact for discrete kinds, Monte Carlo for Gaussian sketches."""
    d = dist.ambient_dim
    kind = dist.kind
    count = None
    if kind is SketchKind.IDENTITY:
        out = np.eye(d)
    elif kind is SketchKind.UNIFORM_BLOCK:
        out = (dist.q / d) * np.eye(d)
    elif kind is SketchKind.COORD_WEIGHTED:
        out = np.diag(dist.probabilities / np.where(dist.column_norms > 0, dist.column_norms, 1.0) ** 2)
    else:
        rng = np.random.default_rng() if rng is None else rng
        out = np.zeros((d, d))
        for _ in range(num_samples):
            S = draw(dist, rng).matrix
            out += S @ S.T
        out /= num_samples
        count = num_samples
    return (out, count) if return_count else out


def _m_term(Ad: np.ndarray, Sm: np.ndarray) -> np.ndarray:
    norm_sq = np.linalg.norm(Ad @ Sm, 2) ** 2
    if norm_sq == 0:
        return np.zeros((Sm.shape[0], Sm.shape[0]))
    return (Sm @ Sm.T) / norm_sq


def m_matrix(dist: SketchDistribution, A, num_samples: int = 10_000,
             rng: Optional[np.random.Generator] = None, return_count: bool = False):
    """``M = E[S S^T / ||A S||_2^2]`` with the convention ``0/0 = 0``.

    Exact for discrete kinds (closed forms for identity and coordinate
    weighting, enumeration for uniform blocks up to ``MAX_EXACT_ATOMS``
    subsets); Monte Carlo over ``num_samples`` draws otherwise.  With
    ``return_count`` the Monte-Carlo sample count (``None`` if exact) is
    returned alongside.
    """
    Ad = to_dense(as_operator(A).matrix)
    d = dist.ambient_dim
    if Ad.shape[1] != d:
        raise ValueError("distribution dimension does not match the matrix")
    if not np.any(Ad):
        raise ValueError("m_matrix requires a nonzero matrix")
    kind = dist.kind
    count = None
    if kind is SketchKind.IDENTITY:
        out = np.eye(d) / np.linalg.norm(Ad, 2) ** 2
    elif kind is SketchKind.COORD_WEIGHTED:
        # ||A e_i / ||A_i|| ||_2 = 1 on every atom, so M = sum_i p_i e_i e_i^T / ||A_i||^2
        out = expected_outer(dist)
    elif kind is SketchKind.UNIFORM_BLOCK and math.comb(d, dist.q) <= MAX_EXACT_ATOMS:
        out = np.zeros((d, d))
        for p, S in atoms(dist):
            J = S.indices
            norm_sq = np.linalg.norm(Ad[:, J], 2) ** 2
            if norm_sq > 0:
                out[J, J] += p / norm_sq
    else:
        rng = np.random.default_rng() if rng is None else rng
        out = np.zeros((d, d))
        for _ in range(num_samples):
            out += _m_term(Ad, sketch_matrix(draw(dist, rng)))
        out /= num_samples
        count = num_samples
    return (out, count) if return_count else out
