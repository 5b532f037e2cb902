import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rcgls.sketching import (DenseSketch, Identity, IndexBlock, ScaledCoordinate, SketchDistribution, SketchKind,
                             atoms, draw, expected_outer, m_matrix, sketch_apply, sketch_apply_transpose,
                             sketch_matrix, sketched_frobenius_sq)

A3 = np.array([[1.0, 0.0], [0.0, 2.0], [1.0, 1.0]])


class TestDraw:
    def test_identity_always(self):
        rng = np.random.default_rng(0)
        dist = SketchDistribution.identity(3)
        assert all(isinstance(draw(dist, rng), Identity) for _ in range(10))

    def test_full_block(self):
        rng = np.random.default_rng(0)
        dist = SketchDistribution.uniform_block(3, 3)
        for _ in range(10):
            assert list(draw(dist, rng).indices) == [0, 1, 2]

    def test_weighted_frequency(self):
        rng = np.random.default_rng(1)
        dist = SketchDistribution.coordinate_weighted(A3)
        hits = sum(draw(dist, rng).index == 1 for _ in range(100_000))
        assert abs(hits / 100_000 - 5 / 7) <= 0.01

    def test_weighted_scale(self):
        S = draw(SketchDistribution.coordinate_weighted(A3), np.random.default_rng(0))
        assert S.scale == pytest.approx(1 / np.linalg.norm(A3[:, S.index]))

    def test_block_too_large(self):
        with pytest.raises(ValueError):
            SketchDistribution.uniform_block(3, 4)

    def test_uniform_block_law(self):
        rng = np.random.default_rng(2)
        dist = SketchDistribution.uniform_block(4, 2)
        counts = {}
        for _ in range(60_000):
            key = tuple(draw(dist, rng).indices)
            counts[key] = counts.get(key, 0) + 1
        assert len(counts) == 6
        for c in counts.values():
            assert abs(c / 60_000 - 1 / 6) < 0.01

    def test_gaussian_scaling(self):
        rng = np.random.default_rng(3)
        dist = SketchDistribution.gaussian(3, 4)
        est = np.mean([(lambda S: S @ S.T)(draw(dist, rng).matrix) for _ in range(20_000)], axis=0)
        assert np.allclose(est, np.eye(3), atol=0.05)

    def test_zero_columns_never_drawn(self):
        A = np.array([[1.0, 0.0, 2.0], [0.0, 0.0, 1.0]])
        dist = SketchDistribution.coordinate_weighted(A)
        rng = np.random.default_rng(4)
        assert all(draw(dist, rng).index != 1 for _ in range(5000))


class TestApply:
    def test_transpose_identity(self):
        assert np.array_equal(sketch_apply_transpose(Identity(2), [1, 2]), [1, 2])

    def test_transpose_block_sorted(self):
        S = IndexBlock(np.array([2, 0]), 3)
        assert list(S.indices) == [0, 2]
        assert np.array_equal(sketch_apply_transpose(S, [9, 8, 7]), [9, 7])

    def test_transpose_scaled(self):
        assert np.array_equal(sketch_apply_transpose(ScaledCoordinate(1, 0.5, 2), [4, 6]), [3])

    def test_apply_identity(self):
        assert np.array_equal(sketch_apply(Identity(2), [1, 2]).to_dense(), [1, 2])

    def test_apply_block(self):
        out = sketch_apply(IndexBlock(np.array([0, 2]), 4), [5, 6])
        assert np.array_equal(out.to_dense(), [5, 0, 6, 0])
        assert out.nnz == 2

    def test_apply_scaled(self):
        assert np.array_equal(sketch_apply(ScaledCoordinate(0, 2.0, 2), [3]).to_dense(), [6, 0])

    def test_dimension_errors(self):
        with pytest.raises(ValueError):
            sketch_apply_transpose(Identity(3), [1, 2])
        with pytest.raises(ValueError):
            sketch_apply(IndexBlock(np.array([0, 2]), 4), [1, 2, 3])

    def test_invalid_samples(self):
        with pytest.raises(ValueError):
            IndexBlock(np.array([1, 1]), 3)
        with pytest.raises(IndexError):
            IndexBlock(np.array([3]), 3)
        with pytest.raises(ValueError):
            ScaledCoordinate(0, 0.0, 2)
        with pytest.raises(ValueError):
            ScaledCoordinate(0, math.inf, 2)


class TestExpectedOuter:
    def test_identity(self):
        assert np.array_equal(expected_outer(SketchDistribution.identity(3)), np.eye(3))

    def test_uniform_block(self):
        assert np.array_equal(expected_outer(SketchDistribution.uniform_block(4, 2)), 0.5 * np.eye(4))

    def test_uniform_block_matches_enumeration(self):
        dist = SketchDistribution.uniform_block(5, 2)
        brute = sum(p * sketch_matrix(S) @ sketch_matrix(S).T for p, S in atoms(dist))
        assert np.allclose(brute, expected_outer(dist), atol=1e-15)

    def test_weighted(self):
        out = expected_outer(SketchDistribution.coordinate_weighted(A3))
        assert np.allclose(out, np.eye(2) / 7, atol=1e-16)

    def test_gaussian_reports_count(self):
        out, count = expected_outer(SketchDistribution.gaussian(2, 1), 500, np.random.default_rng(0),
                                    return_count=True)
        assert count == 500 and out.shape == (2, 2)


class TestMMatrix:
    def test_weighted(self):
        M = m_matrix(SketchDistribution.coordinate_weighted(A3), A3)
        assert np.allclose(M, np.eye(2) / 7, atol=1e-16)

    def test_identity(self):
        M = m_matrix(SketchDistribution.identity(2), A3)
        assert np.allclose(M, np.eye(2) / np.linalg.norm(A3, 2) ** 2, rtol=1e-14)

    def test_zero_atom_contributes_nothing(self):
        A = np.array([[1.0, 0.0, 0.0], [2.0, 0.0, 0.0]])
        M = m_matrix(SketchDistribution.uniform_block(3, 1), A)
        want = np.zeros((3, 3))
        want[0, 0] = (1 / 3) / 5
        assert np.allclose(M, want, atol=1e-16)

    def test_uniform_block_brute_force(self):
        rng = np.random.default_rng(5)
        A = rng.standard_normal((6, 4))
        dist = SketchDistribution.uniform_block(4, 2)
        brute = np.zeros((4, 4))
        for p, S in atoms(dist):
            Sm = sketch_matrix(S)
            brute += p * Sm @ Sm.T / np.linalg.norm(A @ Sm, 2) ** 2
        assert np.allclose(m_matrix(dist, A), brute, atol=1e-15)

    def test_gaussian_monte_carlo_count(self):
        _, count = m_matrix(SketchDistribution.gaussian(2, 1), A3, 300, np.random.default_rng(0), return_count=True)
        assert count == 300

    def test_frobenius_helper(self):
        col_sq = np.einsum("ij,ij->j", A3, A3)
        assert sketched_frobenius_sq(IndexBlock(np.array([0, 1]), 2), col_sq) == 7
        assert sketched_frobenius_sq(ScaledCoordinate(1, 0.5, 2), col_sq) == pytest.approx(5 / 4)
        D = np.array([[1.0], [2.0]])
        # dense sketches use the documented surrogate sum_j ||A_j||^2 ||S_j,:||^2
        assert sketched_frobenius_sq(DenseSketch(D), col_sq) == pytest.approx(2 * 1 + 5 * 4)


def zoo(A, q):
    d = A.shape[1]
    return [SketchDistribution.identity(d), SketchDistribution.coordinate_weighted(A),
            SketchDistribution.uniform_block(d, min(q, d))]


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 6), st.integers(1, 6), st.integers(0, 2**32 - 1))
def test_expected_outer_uniform_closed_form(m, q, seed):
    q = min(q, m)
    assert np.array_equal(expected_outer(SketchDistribution.uniform_block(m, q)), (q / m) * np.eye(m))


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 10), st.integers(1, 6), st.integers(1, 6), st.integers(0, 2**32 - 1))
def test_expected_outer_positive_definite(n, d, q, seed):
    A = np.random.default_rng(seed).standard_normal((n, d)) + 0.1
    for dist in zoo(A, q):
        assert np.linalg.eigvalsh(expected_outer(dist)).min() > 0


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 6), st.integers(0, 2**32 - 1))
def test_m_matrix_positive_definite(q, seed):
    A = np.random.default_rng(seed).standard_normal((10, 6))
    for dist in zoo(A, q):
        M = m_matrix(dist, A)
        assert np.allclose(M, M.T)
        assert np.linalg.eigvalsh(M).min() > 0


@settings(max_examples=60, deadline=None)
@given(st.sampled_from(list(SketchKind)), st.integers(1, 8), st.integers(1, 4), st.integers(0, 2**32 - 1))
def test_apply_adjoint(kind, d, q, seed):
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((3, d))
    dist = {SketchKind.IDENTITY: lambda: SketchDistribution.identity(d),
            SketchKind.UNIFORM_BLOCK: lambda: SketchDistribution.uniform_block(d, min(q, d)),
            SketchKind.COORD_WEIGHTED: lambda: SketchDistribution.coordinate_weighted(A),
            SketchKind.GAUSSIAN: lambda: SketchDistribution.gaussian(d, q)}[kind]()
    S = draw(dist, rng)
    v, w = rng.standard_normal(d), rng.standard_normal(S.q)
    lhs = float(sketch_apply_transpose(S, v) @ w)
    rhs = float(v @ sketch_apply(S, w).to_dense())
    assert abs(lhs - rhs) <= 1e-12 * max(1.0, np.abs(v).sum() * np.abs(w).sum())


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 20), st.integers(1, 20), st.integers(0, 2**32 - 1))
def test_draw_block_valid(m, q, seed):
    q = min(q, m)
    S = draw(SketchDistribution.uniform_block(m, q), np.random.default_rng(seed))
    assert S.q == q and len(set(S.indices)) == q and np.all(np.diff(S.indices) > 0)
