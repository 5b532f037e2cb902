import math

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

from helpers import random_problem
from rcgls.linalg import RidgeProblem, direct_oracle, to_dense
from rcgls.sketching import Identity, ScaledCoordinate, SketchDistribution, draw
from rcgls.solvers import StopRule
from rcgls.ridge import (RidgeOption, augmented_residual, build_augmented, ridge_distribution, ridge_grcd_init,
                         ridge_grcd_step, ridge_option1_init, ridge_option1_step, ridge_option2_init,
                         ridge_option2_step, rk_augmented_step, run_ridge, select_option)


def scalar_system():
    return build_augmented(RidgeProblem(np.array([[2.0]]), np.array([4.0]), 1.0))


def ridge_system(rng, n, d, lam, density=None):
    A, b = random_problem(rng, n, d, density)
    return build_augmented(RidgeProblem(A, b, lam)), direct_oracle(A, b, lam).x_star


def rel_err(x, ref):
    return np.linalg.norm(x - ref) / np.linalg.norm(ref)


class TestAugmented:
    def test_scalar_blocks(self):
        sy = scalar_system()
        assert np.array_equal(sy.V.toarray().ravel(), [2.0, -1.0])
        assert np.array_equal(sy.U.toarray().ravel(), [1.0, 2.0])
        assert float(sy.V.toarray().ravel() @ sy.U.toarray().ravel()) == 0.0

    def test_block_orthogonality_5x3(self):
        rng = np.random.default_rng(0)
        sy, _ = ridge_system(rng, 5, 3, 0.05)
        VtU = sy.V.toarray().T @ sy.U.toarray()
        bound = 1e-12 * math.sqrt(0.05) * np.linalg.norm(to_dense(sy.A_bar.matrix))
        assert np.abs(VtU).max() <= bound

    def test_rhs_lower_block_zero(self):
        rng = np.random.default_rng(1)
        sy, _ = ridge_system(rng, 6, 4, 0.5)
        assert np.array_equal(sy.b_hat[6:], np.zeros(4))
        assert np.array_equal(sy.b_hat[:6], sy.b_bar)

    def test_matvec_matches_dense(self):
        rng = np.random.default_rng(2)
        sy, _ = ridge_system(rng, 4, 3, 0.3)
        xh = rng.standard_normal(7)
        assert np.allclose(sy.a_hat_matvec(xh), sy.a_hat_dense() @ xh, rtol=1e-14, atol=1e-14)
        rows = np.array([sy.a_hat_row(i) for i in range(7)])
        assert np.array_equal(rows, sy.a_hat_dense())

    def test_separable_objective(self):
        # ||A_hat x_hat - b_hat||^2 splits as ||U y - b_hat||^2 + ||V x - b_hat||^2 - ||b_hat||^2
        rng = np.random.default_rng(3)
        sy, _ = ridge_system(rng, 5, 3, 0.2)
        y, x = rng.standard_normal(5), rng.standard_normal(3)
        lhs = np.linalg.norm(sy.a_hat_matvec(np.concatenate([y, x])) - sy.b_hat) ** 2
        rhs = (np.linalg.norm(sy.U.matvec(y) - sy.b_hat) ** 2 + np.linalg.norm(sy.V.matvec(x) - sy.b_hat) ** 2
               - np.linalg.norm(sy.b_hat) ** 2)
        assert lhs == pytest.approx(rhs, rel=1e-12)

    @pytest.mark.parametrize("lam", [0.0, -1.0])
    def test_nonpositive_lambda_rejected(self, lam):
        with pytest.raises(ValueError):
            build_augmented(RidgeProblem(np.eye(2), np.ones(2), lam))

    def test_dense_cutoff(self):
        sy = build_augmented(RidgeProblem(sp.eye_array(3000, 2000, format="csc"), np.ones(3000), 1.0))
        with pytest.raises(MemoryError):
            sy.a_hat_dense()


class TestSelectOption:
    @pytest.mark.parametrize("n,d,access,expected", [
        (100, 100, "both", RidgeOption.I),
        (10, 500, "both", RidgeOption.II),
        (10, 500, "columns-only", RidgeOption.I),
        (500, 10, "rows-only", RidgeOption.II),
    ])
    def test_cases(self, n, d, access, expected):
        assert select_option(n, d, access) is expected

    def test_unknown_access(self):
        with pytest.raises(ValueError):
            select_option(3, 3, "diagonal")


class TestOptionI:
    def test_scalar_first_step(self):
        sy = scalar_system()
        st_ = ridge_option1_init(sy, Identity(1))
        assert st_.w[0] == 8.0 and st_.p[0] == 8.0 and st_.u[0] == 16.0
        assert st_.sigma == 320.0
        nxt = ridge_option1_step(st_, sy, Identity(1))
        assert nxt.mu == pytest.approx(0.2, rel=1e-15)
        assert nxt.x[0] == pytest.approx(1.6, rel=1e-15)

    def test_fixed_point(self):
        rng = np.random.default_rng(4)
        sy, x_star = ridge_system(rng, 12, 5, 0.05)
        dist = SketchDistribution.uniform_block(5, 2)
        for _ in range(100):
            st_ = ridge_option1_init(sy, draw(dist, rng), x_star)
            assert not st_.w.any()
            nxt = ridge_option1_step(st_, sy, draw(dist, rng))
            assert np.array_equal(nxt.x, x_star)

    def test_converges_20x8(self):
        rng = np.random.default_rng(5)
        sy, x_star = ridge_system(rng, 20, 8, 0.05)
        dist = SketchDistribution.uniform_block(8, 4)
        stop = StopRule(5000, gradient_tolerance=1e-10 * np.linalg.norm(sy.A_bar.rmatvec(sy.b_bar)))
        res = run_ridge(sy, "ridge-rcgls", dist, stop, option=1, rng=rng)
        assert res.reason == "gradient_tolerance"
        assert rel_err(res.x, x_star) <= 1e-6

    def test_augmented_residual_structure(self):
        rng = np.random.default_rng(6)
        sy, _ = ridge_system(rng, 7, 4, 0.1)
        dist = SketchDistribution.uniform_block(4, 2)
        st_ = ridge_option1_init(sy, draw(dist, rng))
        for _ in range(6):
            st_ = ridge_option1_step(st_, sy, draw(dist, rng))
            explicit = sy.b_hat - sy.V.matvec(st_.x)
            assert np.linalg.norm(augmented_residual(st_, sy) - explicit) <= 1e-8 * np.linalg.norm(explicit)


class TestOptionII:
    def test_scalar_first_step(self):
        sy = scalar_system()
        st_ = ridge_option2_init(sy, Identity(1))
        assert st_.w[0] == 4.0 and st_.p[0] == 4.0 and st_.u[0] == 8.0
        assert st_.sigma == 80.0
        nxt = ridge_option2_step(st_, sy, Identity(1))
        assert nxt.mu == pytest.approx(0.2, rel=1e-15)
        assert nxt.y[0] == pytest.approx(0.8, rel=1e-15)
        assert nxt.x[0] == pytest.approx(1.6, rel=1e-15)

    def test_fixed_point(self):
        rng = np.random.default_rng(7)
        sy, x_star = ridge_system(rng, 5, 12, 0.05)
        A = to_dense(sy.A_bar.matrix)
        # normal equations of min ||U y - b_hat||: (lam I + A A^T) y = sqrt(lam) b
        y_star = np.linalg.solve(0.05 * np.eye(5) + A @ A.T, math.sqrt(0.05) * sy.b_bar)
        dist = SketchDistribution.uniform_block(5, 2)
        for _ in range(100):
            st_ = ridge_option2_init(sy, draw(dist, rng), y_star)
            assert np.linalg.norm(st_.w) <= 1e-13 * np.linalg.norm(sy.b_bar)
        assert rel_err(A.T @ y_star / math.sqrt(0.05), x_star) <= 1e-12

    def test_x_follows_y(self):
        rng = np.random.default_rng(8)
        sy, _ = ridge_system(rng, 6, 9, 0.2)
        A = to_dense(sy.A_bar.matrix)
        dist = SketchDistribution.uniform_block(6, 3)
        st_ = ridge_option2_init(sy, draw(dist, rng))
        for _ in range(15):
            st_ = ridge_option2_step(st_, sy, draw(dist, rng))
            ref = A.T @ st_.y / math.sqrt(0.2)
            assert np.linalg.norm(st_.x - ref) <= 1e-8 * max(np.linalg.norm(ref), 1e-300)

    def test_x0_rejected(self):
        sy = scalar_system()
        with pytest.raises(ValueError):
            run_ridge(sy, "ridge-rcgls", SketchDistribution.identity(1), StopRule(3), option=2, x0=np.zeros(1))

    def test_dimension_mismatch(self):
        rng = np.random.default_rng(9)
        sy, _ = ridge_system(rng, 6, 3, 0.1)
        with pytest.raises(ValueError):
            run_ridge(sy, "ridge-rcgls", SketchDistribution.uniform_block(3, 1), StopRule(3), option=2)


def test_options_agree():
    rng = np.random.default_rng(10)
    sy, x_star = ridge_system(rng, 15, 10, 0.05)
    stop = StopRule(20000, gradient_tolerance=1e-10 * np.linalg.norm(sy.A_bar.rmatvec(sy.b_bar)))
    r1 = run_ridge(sy, "ridge-rcgls", ridge_distribution("uniform-block", sy, 1, 3), stop, 1,
                   np.random.default_rng(11))
    r2 = run_ridge(sy, "ridge-rcgls", ridge_distribution("uniform-block", sy, 2, 3), stop, 2,
                   np.random.default_rng(12))
    assert rel_err(r1.x, x_star) <= 1e-6
    assert rel_err(r2.x, x_star) <= 1e-6


@pytest.mark.parametrize("option", [1, 2])
def test_efficient_variant_converges(option):
    rng = np.random.default_rng(13)
    sy, x_star = ridge_system(rng, 14, 9, 0.05, density=0.4)
    dist = ridge_distribution("uniform-block", sy, option, 2)
    tol = 1e-9 * np.linalg.norm(sy.A_bar.rmatvec(sy.b_bar))
    res = run_ridge(sy, "ridge-rcgls-efficient", dist, StopRule(20000, gradient_tolerance=tol), option, rng)
    assert res.reason == "gradient_tolerance"
    assert rel_err(res.x, x_star) <= 1e-6


class TestGrcd:
    def test_scalar_matches_rcgls_first_step(self):
        sy = scalar_system()
        st_ = ridge_grcd_init(sy, RidgeOption.I)
        ridge_grcd_step(st_, sy, Identity(1))
        assert st_.x[0] == pytest.approx(1.6, rel=1e-15)

    def test_fixed_point(self):
        rng = np.random.default_rng(14)
        sy, x_star = ridge_system(rng, 9, 4, 0.05)
        st_ = ridge_grcd_init(sy, RidgeOption.I, x0=x_star)
        for j in range(4):
            ridge_grcd_step(st_, sy, ScaledCoordinate(j, 1.0, 4))
        assert np.array_equal(st_.x, x_star)

    @pytest.mark.parametrize("seed", range(5))
    def test_single_coordinate_oracle(self, seed):
        rng = np.random.default_rng(100 + seed)
        lam = 0.05
        A, b = random_problem(rng, 5, 3)
        sy = build_augmented(RidgeProblem(A, b, lam))
        dist = SketchDistribution.coordinate_weighted(sy.V)

        def f(x):
            return float(np.sum((A @ x - b) ** 2) + lam * x @ x)

        st_ = ridge_grcd_init(sy, RidgeOption.I)
        for _ in range(8):
            S = draw(dist, rng)
            x = st_.x.copy()
            # exact minimizer of the 1-d quadratic t -> f(x + t e_j) from three samples
            e = np.zeros(3)
            e[S.index] = 1.0
            f0, fp, fm = f(x), f(x + e), f(x - e)
            t = (fm - fp) / (2 * (fp - 2 * f0 + fm))
            ridge_grcd_step(st_, sy, S)
            expected = x + t * e
            assert np.linalg.norm(st_.x - expected) <= 1e-12 * np.linalg.norm(expected)
            assert np.linalg.norm(st_.aux - (b - A @ st_.x)) <= 1e-12 * np.linalg.norm(b)

    def test_option2_converges(self):
        rng = np.random.default_rng(15)
        sy, x_star = ridge_system(rng, 6, 12, 0.05)
        dist = ridge_distribution("uniform-block", sy, 2, 2)
        res = run_ridge(sy, "ridge-grcd", dist, StopRule(50000, gradient_tolerance=1e-12), 2, rng)
        assert rel_err(res.x, x_star) <= 1e-6


class TestWastedIteration:
    """Plain Kaczmarz on the augmented system from a point with U^T x_hat = b."""

    @pytest.mark.parametrize("seed", range(3))
    def test_first_block_steps_are_zero_second_block_preserves(self, seed):
        rng = np.random.default_rng(200 + seed)
        n, d, lam = 5, 3, 0.05
        sy, _ = ridge_system(rng, n, d, lam)
        A = to_dense(sy.A_bar.matrix)
        x = rng.standard_normal(d)
        y = (sy.b_bar - A @ x) / math.sqrt(lam)
        x_hat = np.concatenate([y, x])
        Ut = sy.U.toarray().T
        assert np.linalg.norm(Ut @ x_hat - sy.b_bar) <= 1e-12 * np.linalg.norm(sy.b_bar)
        for i in range(n):
            moved = rk_augmented_step(sy, x_hat, i)
            assert np.linalg.norm(moved - x_hat) <= 1e-14 * np.linalg.norm(x_hat)
        for i in range(n, n + d):
            moved = rk_augmented_step(sy, x_hat, i)
            assert np.linalg.norm(moved - x_hat) > 0
            assert np.linalg.norm(Ut @ moved - sy.b_bar) <= 1e-12 * np.linalg.norm(sy.b_bar)
            x_hat = moved


def test_run_ridge_unknown_method():
    sy = scalar_system()
    with pytest.raises(ValueError):
        run_ridge(sy, "ridge-cgls", SketchDistribution.identity(1), StopRule(2), 1)


def test_zero_iterations_returns_start():
    sy = scalar_system()
    res = run_ridge(sy, "ridge-rcgls", SketchDistribution.identity(1), StopRule(0), 1, x0=np.array([0.5]))
    assert res.iterations == 0 and res.x[0] == 0.5 and res.trace == []


shapes = st.tuples(st.integers(2, 9), st.integers(2, 9))


@settings(max_examples=30, deadline=None)
@given(shapes, st.integers(1, 4), st.sampled_from([1, 2]), st.sampled_from([0.5, 0.05, 0.005]),
       st.integers(0, 2**32 - 1))
def test_state_invariants(shape, q, option, lam, seed):
    rng = np.random.default_rng(seed)
    n, d = shape
    sy, _ = ridge_system(rng, n, d, lam)
    A = to_dense(sy.A_bar.matrix)
    dim = d if option == 1 else n
    dist = SketchDistribution.uniform_block(dim, min(q, dim))
    init, step = (ridge_option1_init, ridge_option1_step) if option == 1 else (ridge_option2_init, ridge_option2_step)
    st_ = init(sy, draw(dist, rng))
    for _ in range(25):
        if st_.w.any():
            direct = float(st_.u @ st_.u) + lam * float(st_.p @ st_.p)
            assert st_.sigma == pytest.approx(direct, rel=1e-6)
        st_ = step(st_, sy, draw(dist, rng))
        if option == 1:
            ref = sy.b_bar - A @ st_.x
            assert np.linalg.norm(st_.g - ref) <= 1e-8 * max(np.linalg.norm(ref), np.linalg.norm(sy.b_bar))
        else:
            ref = A.T @ st_.y / math.sqrt(lam)
            assert np.linalg.norm(st_.x - ref) <= 1e-8 * max(np.linalg.norm(ref), np.linalg.norm(sy.b_bar))
