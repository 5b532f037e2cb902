"""Matrix storage, column-access operators, LIBSVM ingestion and direct oracles.

Every solver in the package talks to its coefficient matrix through a
:class:`ColumnOperator`.  The operator exposes full products (``matvec``,
``rmatvec``) and, more importantly, *column blocks*: the restriction of the
matrix to a set of columns, stored so that the sketched products
``A[:, J].T @ v`` and ``A[:, J] @ w`` cost ``O(sum_j nnz(A[:, j]))``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from os import PathLike
from typing import Optional, Sequence, Union

import numpy as np
import scipy.linalg
import scipy.sparse as sp

logger = logging.getLogger(__name__)

RANK_CUTOFF = 1e-12

Matrix = Union[np.ndarray, sp.spmatrix, sp.sparray]


# ---------------------------------------------------------------------------
# problem containers
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ProblemInstance:
    """Least-squares problem ``min 0.5 * ||A x - b||^2``."""

    A: Matrix
    b: np.ndarray

    def __post_init__(self):
        A = _as_storage(self.A)
        b = np.asarray(self.b, dtype=float).ravel()
        if A.ndim != 2 or A.shape[0] < 1 or A.shape[1] < 1:
            raise ValueError(f"A must be a nonempty 2-d matrix, got shape {A.shape}")
        if b.shape[0] != A.shape[0]:
            raise ValueError(f"b has length {b.shape[0]} but A has {A.shape[0]} rows")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)

    @property
    def shape(self) -> tuple[int, int]:
        return self.A.shape


@dataclass(frozen=True)
class RidgeProblem:
    """Ridge regression ``min 0.5 * ||A x - b||^2 + 0.5 * lam * ||x||^2``."""

    A: Matrix
    b: np.ndarray
    lam: float

    def __post_init__(self):
        if not self.lam > 0:
            raise ValueError(f"ridge parameter must be positive, got {self.lam}")
        base = ProblemInstance(self.A, self.b)
        object.__setattr__(self, "A", base.A)
        object.__setattr__(self, "b", base.b)
        object.__setattr__(self, "lam", float(self.lam))

    @property
    def shape(self) -> tuple[int, int]:
        return self.A.shape


@dataclass(frozen=True)
class SolutionCertificate:
    x_star: np.ndarray
    residual_norm: float
    method_tag: str  # "pseudoinverse" or "regularized-normal-equations"


def _as_storage(A) -> Matrix:
    if sp.issparse(A):
        return sp.csc_array(A, dtype=float)
    return np.asarray(A, dtype=float)


def to_dense(A: Matrix) -> np.ndarray:
    if sp.issparse(A):
        return A.toarray()
    return np.asarray(A, dtype=float)


# ---------------------------------------------------------------------------
# sparse vectors and column blocks
# ---------------------------------------------------------------------------


class SparseVec:
    """Vector of length ``size`` stored as unique sorted indices and values."""

    __slots__ = ("idx", "val", "size")

    def __init__(self, idx: np.ndarray, val: np.ndarray, size: int):
        self.idx = idx
        self.val = val
        self.size = size

    @classmethod
    def dense(cls, val: np.ndarray) -> "SparseVec":
        return cls(np.arange(val.shape[0]), val, val.shape[0])

    @property
    def nnz(self) -> int:
        return self.idx.shape[0]

    def to_dense(self) -> np.ndarray:
        out = np.zeros(self.size)
        out[self.idx] = self.val
        return out

    def dot(self, y: np.ndarray) -> float:
        return float(self.val @ y[self.idx])

    def norm_sq(self) -> float:
        return float(self.val @ self.val)

    def add_into(self, target: np.ndarray, alpha: float = 1.0) -> None:
        """In place ``target += alpha * self``; touches only the support."""
        target[self.idx] += alpha * self.val

    def __repr__(self):
        return f"SparseVec(nnz={self.nnz}, size={self.size})"


class ColumnBlock:
    """Columns ``J`` of an operator, optionally scaled by per-column weights.

    ``rdot(v)`` returns ``W A[:, J].T v`` and ``combine(w)`` returns
    ``A[:, J] W w`` as a :class:`SparseVec`, where ``W = diag(weights)``.
    ``nnz`` is the multiply-add count of either product.
    """

    def __init__(self, rows, vals, owner, width, n_rows, weights=None):
        self.rows = rows
        self.vals = vals
        self.owner = owner
        self.width = width
        self.n_rows = n_rows
        self.weights = weights
        self._support = None

    @property
    def nnz(self) -> int:
        return self.rows.shape[0]

    def rdot(self, v: np.ndarray) -> np.ndarray:
        s = np.bincount(self.owner, weights=self.vals * v[self.rows], minlength=self.width)
        if self.weights is not None:
            s *= self.weights
        return s

    def combine(self, w: np.ndarray) -> SparseVec:
        if self.weights is not None:
            w = w * self.weights
        if self._support is None:
            self._support = np.unique(self.rows, return_inverse=True)
        idx, inv = self._support
        val = np.bincount(inv, weights=self.vals * w[self.owner], minlength=idx.shape[0])
        return SparseVec(idx, val, self.n_rows)

    def support(self) -> np.ndarray:
        if self._support is None:
            self._support = np.unique(self.rows, return_inverse=True)
        return self._support[0]


class DenseColumnBlock:
    """Dense counterpart of :class:`ColumnBlock` (support is every row)."""

    def __init__(self, cols: np.ndarray, weights=None):
        self.cols = cols
        self.width = cols.shape[1]
        self.n_rows = cols.shape[0]
        self.weights = weights

    @property
    def nnz(self) -> int:
        return self.cols.size

    def rdot(self, v: np.ndarray) -> np.ndarray:
        s = self.cols.T @ v
        if self.weights is not None:
            s = s * self.weights
        return s

    def combine(self, w: np.ndarray) -> SparseVec:
        if self.weights is not None:
            w = w * self.weights
        return SparseVec.dense(self.cols @ w)

    def support(self) -> np.ndarray:
        return np.arange(self.n_rows)


def _csc_triplets(indptr, indices, data, J):
    """Row indices, values and owning block position of the nonzeros of columns J."""
    starts = indptr[J]
    counts = indptr[J + 1] - starts
    total = int(counts.sum())
    owner = np.repeat(np.arange(J.shape[0]), counts)
    offsets = np.cumsum(counts) - counts
    pos = np.arange(total) - np.repeat(offsets, counts) + np.repeat(starts, counts)
    return indices[pos], data[pos], owner


# ---------------------------------------------------------------------------
# operators
# ---------------------------------------------------------------------------


class ColumnOperator:
    """Read-only column-access wrapper around a dense or CSC matrix."""

    def __init__(self, A: Matrix):
        A = _as_storage(A)
        self.shape = A.shape
        if sp.issparse(A):
            A.sort_indices()
            self.sparse = True
            self._csc = A
            self.col_nnz = np.diff(A.indptr)
            self.col_sq_norms = np.asarray(A.multiply(A).sum(axis=0)).ravel()
        else:
            self.sparse = False
            self._dense = A
            self.col_nnz = np.full(A.shape[1], A.shape[0])
            self.col_sq_norms = np.einsum("ij,ij->j", A, A)
        self.nnz = int(self.col_nnz.sum())

    @property
    def matrix(self) -> Matrix:
        return self._csc if self.sparse else self._dense

    def matvec(self, x: np.ndarray) -> np.ndarray:
        return self.matrix @ x

    def rmatvec(self, y: np.ndarray) -> np.ndarray:
        return self.matrix.T @ y

    def column_block(self, J, weights=None):
        J = np.asarray(J, dtype=np.intp)
        if self.sparse:
            rows, vals, owner = _csc_triplets(self._csc.indptr, self._csc.indices, self._csc.data, J)
            return ColumnBlock(rows, vals, owner, J.shape[0], self.shape[0], weights)
        if J.shape[0] == self.shape[1] and np.array_equal(J, np.arange(self.shape[1])):
            return DenseColumnBlock(self._dense, weights)  # full range: no copy
        return DenseColumnBlock(self._dense[:, J], weights)

    def toarray(self) -> np.ndarray:
        return to_dense(self.matrix)


def as_operator(A) -> ColumnOperator:
    if isinstance(A, ColumnOperator):
        return A
    if isinstance(A, ProblemInstance):
        return ColumnOperator(A.A)
    return ColumnOperator(A)


# ---------------------------------------------------------------------------
# public operations
# ---------------------------------------------------------------------------


def _check_len(vec, expected, what):
    vec = np.asarray(vec, dtype=float)
    if vec.ndim != 1 or vec.shape[0] != expected:
        raise ValueError(f"{what} must have length {expected}, got shape {vec.shape}")
    return vec


def matvec(A, x) -> np.ndarray:
    """Return ``A @ x``; raises ``ValueError`` on a dimension mismatch."""
    op = as_operator(A)
    return op.matvec(_check_len(x, op.shape[1], "x"))


def rmatvec(A, y) -> np.ndarray:
    """Return ``A.T @ y``; raises ``ValueError`` on a dimension mismatch."""
    op = as_operator(A)
    return op.rmatvec(_check_len(y, op.shape[0], "y"))


def sketched_products(A, J: Sequence[int], v, weights=None):
    """Compute ``W A[:, J].T v`` and return it with the block that builds ``A[:, J] W w``.

    Parameters
    ----------
    A : matrix or ColumnOperator
    J : distinct 0-based column indices
    v : vector of length n
    weights : optional per-index scaling ``W``

    Returns
    -------
    s : ndarray of length ``len(J)``
    block : ColumnBlock or DenseColumnBlock, whose ``combine(w)`` accumulates
        ``A[:, J] W w`` touching only the nonzeros of the selected columns.
    """
    op = as_operator(A)
    J = np.asarray(J, dtype=np.intp).ravel()
    if J.size and (J.min() < 0 or J.max() >= op.shape[1]):
        raise IndexError(f"column index out of range [0, {op.shape[1]})")
    if np.unique(J).shape[0] != J.shape[0]:
        raise ValueError("column indices must be distinct")
    v = _check_len(v, op.shape[0], "v")
    if weights is not None:
        weights = np.broadcast_to(np.asarray(weights, dtype=float), J.shape).copy()
    block = op.column_block(J, weights)
    return block.rdot(v), block


# ---------------------------------------------------------------------------
# LIBSVM
# ---------------------------------------------------------------------------


class LibsvmFormatError(ValueError):
    pass


def read_libsvm(path: Union[str, PathLike], n_features: Optional[int] = None) -> ProblemInstance:
    """Parse a LIBSVM text file into a sparse problem (rows = samples).

    Feature indices in the file are 1-based.  The column count is the largest
    index seen unless ``n_features`` overrides it.
    """
    labels = []
    rows, cols, vals = [], [], []
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            tokens = line.split()
            try:
                label = float(tokens[0])
            except ValueError:
                raise LibsvmFormatError(f"line {lineno}: bad label {tokens[0]!r}") from None
            seen = set()
            for tok in tokens[1:]:
                idx_s, sep, val_s = tok.partition(":")
                if not sep:
                    raise LibsvmFormatError(f"line {lineno}: expected idx:val, got {tok!r}")
                try:
                    idx = int(idx_s)
                    val = float(val_s)
                except ValueError:
                    raise LibsvmFormatError(f"line {lineno}: bad entry {tok!r}") from None
                if idx < 1:
                    raise LibsvmFormatError(f"line {lineno}: feature index {idx} < 1")
                if idx in seen:
                    raise LibsvmFormatError(f"line {lineno}: duplicate feature index {idx}")
                seen.add(idx)
                rows.append(len(labels))
                cols.append(idx - 1)
                vals.append(val)
            labels.append(label)
    if not labels:
        raise LibsvmFormatError(f"{path}: empty dataset")
    d = max(cols) + 1 if cols else 1
    if n_features is not None:
        if cols and n_features < d:
            raise LibsvmFormatError(f"n_features={n_features} smaller than max index {d}")
        d = n_features
    A = sp.csc_array((vals, (rows, cols)), shape=(len(labels), d))
    return ProblemInstance(A, np.array(labels))


# ---------------------------------------------------------------------------
# oracles
# ---------------------------------------------------------------------------


def spectral_cutoff(s: np.ndarray, cutoff: float = RANK_CUTOFF) -> np.ndarray:
    """Singular values above ``cutoff * max(s)``."""
    if s.size == 0 or s.max() == 0:
        return s[:0]
    return s[s > cutoff * s.max()]


def direct_oracle(A, b, lam: float = 0.0) -> SolutionCertificate:
    """Ground-truth solution of the (ridge-)least-squares problem.

    ``lam > 0`` solves ``(A^T A + lam I) x = A^T b`` by Cholesky, falling back
    to the SVD path if factorization fails.  ``lam == 0`` returns the
    minimum-norm least-squares solution with singular values below
    ``1e-12 * sigma_max`` treated as zero.
    """
    if lam < 0:
        raise ValueError("lam must be nonnegative")
    Ad = to_dense(A.A if isinstance(A, ProblemInstance) else A)
    b = np.asarray(b, dtype=float)
    if not np.any(Ad):
        raise ValueError("direct_oracle requires a nonzero matrix")
    Atb = Ad.T @ b
    x = None
    tag = "pseudoinverse"
    if lam > 0:
        try:
            factor = scipy.linalg.cho_factor(Ad.T @ Ad + lam * np.eye(Ad.shape[1]))
            x = scipy.linalg.cho_solve(factor, Atb)
            tag = "regularized-normal-equations"
        except np.linalg.LinAlgError:
            logger.info("Cholesky failed for lam=%g, using the SVD path", lam)
    if x is None:
        U, s, Vt = np.linalg.svd(Ad, full_matrices=False)
        keep = s > RANK_CUTOFF * s.max()
        coef = np.zeros_like(s)
        coef[keep] = s[keep] / (s[keep] ** 2 + lam)
        x = Vt.T @ (coef * (U.T @ b))
    residual = Atb - Ad.T @ (Ad @ x) - lam * x
    return SolutionCertificate(x, float(np.linalg.norm(residual)), tag)
