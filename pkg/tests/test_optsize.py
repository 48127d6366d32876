import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import isotonic_regression
from scipy.special import ndtr

from mdfcontrol.optsize import (
    RepairError,
    RocModel,
    build_optimal_family,
    optimize_weights_at_alpha,
    pava,
    roc_normal_shift,
    solve_grid,
)
from mdfcontrol.sizefam import SizeFamily, a3_product, validate_family


def grid_oracle(thetas, alpha, step=1e-3):
    """Best total power over a regular grid of the weight simplex (M = 2 or 3)."""
    n = int(round(1 / step))
    i = np.arange(n + 1)
    if len(thetas) == 2:
        W = np.column_stack([i, n - i]) / n
    else:
        a, b = np.meshgrid(i, i, indexing="ij")
        keep = a + b <= n
        W = np.column_stack([a[keep], b[keep], n - a[keep] - b[keep]]) / n
    sizes = -np.expm1(W * np.log1p(-alpha))
    power = roc_normal_shift(sizes, np.asarray(thetas)[None, :]).sum(axis=1)
    k = int(np.argmax(power))
    return W[k], float(power[k])


class TestRoc:
    def test_example(self):
        assert roc_normal_shift(0.05, 2.0) == pytest.approx(0.6388, abs=1e-3)

    def test_diagonal_and_endpoints(self):
        a = np.linspace(0, 1, 11)
        assert np.array_equal(roc_normal_shift(a, 0.0), a)
        assert roc_normal_shift(1.0, 3.0) == 1.0
        assert roc_normal_shift(0.0, 3.0) == 0.0

    def test_errors(self):
        with pytest.raises(ValueError):
            roc_normal_shift(1.2, 1.0)
        with pytest.raises(ValueError):
            roc_normal_shift(0.5, -1.0)

    @pytest.mark.parametrize("x", [-8.0, -3.3, -1.0, 0.0, 0.7, 2.5, 6.0])
    def test_normal_cdf_precision(self, x):
        assert float(ndtr(x)) == pytest.approx(float(mpmath.ncdf(x)), abs=1e-12, rel=1e-12)


class TestWeights:
    def test_example_vs_grid(self):
        sol = optimize_weights_at_alpha(RocModel([3.0, 0.5]), 0.05)
        w, _ = grid_oracle([3.0, 0.5], 0.05)
        assert np.all(np.abs(sol.weights - w) <= 2e-3)
        assert sol.kkt_residual <= 1e-8
        assert sol.weights.sum() == pytest.approx(1.0, abs=1e-10)

    def test_single(self):
        assert optimize_weights_at_alpha(RocModel([2.0]), 0.3).weights.tolist() == [1.0]

    def test_equal_thetas(self):
        sol = optimize_weights_at_alpha(RocModel([1.5] * 4), 0.1)
        assert np.allclose(sol.weights, 0.25, atol=1e-6)

    def test_oracle_objective(self):
        rng = np.random.default_rng(8)
        for _ in range(20):
            M = int(rng.integers(2, 4))
            th = rng.uniform(0.2, 4.0, M)
            a = float(rng.uniform(0.01, 0.5))
            sol = optimize_weights_at_alpha(RocModel(th), a)
            _, best = grid_oracle(th, a)
            assert sol.total_power >= best - 1e-5

    def test_alpha_domain(self):
        with pytest.raises(ValueError):
            optimize_weights_at_alpha(RocModel([1.0, 2.0]), 1.0)


@settings(max_examples=40, deadline=None)
@given(
    st.lists(st.floats(0.1, 4.0), min_size=2, max_size=6),
    st.floats(0.005, 0.9),
    st.randoms(use_true_random=False),
)
def test_dominance_and_symmetry(thetas, alpha, rnd):
    roc = RocModel(thetas)
    sol = optimize_weights_at_alpha(roc, alpha)
    M = len(thetas)
    assert sol.total_power >= roc.total_power(np.full(M, 1.0 / M), alpha) - 1e-12
    perm = list(range(M))
    rnd.shuffle(perm)
    other = optimize_weights_at_alpha(RocModel([thetas[i] for i in perm]), alpha)
    assert np.allclose(other.weights, sol.weights[perm], atol=1e-8)


class TestPava:
    @given(st.lists(st.floats(-10, 10), min_size=1, max_size=40))
    def test_matches_scipy(self, y):
        assert np.allclose(pava(y), isotonic_regression(y).x, atol=1e-9)

    def test_weighted(self):
        y, w = [3.0, 1.0, 2.0], [1.0, 3.0, 1.0]
        assert np.allclose(pava(y, w), isotonic_regression(y, weights=w).x)

    def test_sorted_fixed(self):
        assert pava([1.0, 2.0, 3.0]).tolist() == [1.0, 2.0, 3.0]


class TestFamily:
    def test_equal_thetas_is_sidak(self):
        grid = np.linspace(0.01, 0.99, 33)
        fam = build_optimal_family(RocModel([2.0] * 3), grid)
        assert np.allclose(fam.evaluate(grid), SizeFamily.sidak(3).evaluate(grid), atol=1e-6)

    def test_single_is_identity(self):
        a = np.linspace(0, 1, 57)
        fam = build_optimal_family(RocModel([1.0]))
        assert np.allclose(fam.evaluate(a)[:, 0], a, atol=1e-12)

    def test_admissible_and_feasible(self):
        roc = RocModel([3.0, 0.5, 1.5])
        grid = np.linspace(0.01, 0.99, 49)
        fam = build_optimal_family(roc, grid)
        report = validate_family(fam, k_max=1)
        assert report.a1_pass and report.a2_pass and report.a3_pass
        for sol in solve_grid(roc, grid):
            assert abs(a3_product(SizeFamily.weighted(sol.weights), sol.alpha) - (1 - sol.alpha)) <= 1e-8
        for a in grid:
            assert a3_product(fam, a) >= 1 - a - 1e-9

    def test_zero_theta_refused(self):
        with pytest.raises(RepairError):
            build_optimal_family(RocModel([0.0, 3.0]))

    def test_small_grid(self):
        with pytest.raises(ValueError, match="16"):
            build_optimal_family(RocModel([1.0, 2.0]), np.linspace(0.1, 0.9, 15))

    def test_unsorted_grid(self):
        with pytest.raises(ValueError):
            build_optimal_family(RocModel([1.0, 2.0]), np.linspace(0.9, 0.1, 20))
