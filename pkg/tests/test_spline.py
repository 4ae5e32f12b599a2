"""
Tests for clamped B-spline bases
"""
import numpy as np
import pytest

from core.exceptions import ConfigurationError, ShapeError
from core.nn.instrumentation import BASIS_EVALS, counting
from core.nn.spline import (
    SplineCoeffs, SplineGrid, basis_eval, basis_window, derivative_window, spline_apply,
)
from core.oracles import naive_basis, run_oracles, window_to_full


def greville(grid: SplineGrid) -> np.ndarray:
    p = grid.degree
    return np.array([grid.knots[m + 1:m + p + 1].mean() for m in range(grid.num_basis)])


class TestSplineGrid:
    def test_knot_vector(self):
        grid = SplineGrid(degree=3, num_basis=8, interior_range=(-2.0, 2.0))
        assert grid.knots.size == 8 + 3 + 1
        np.testing.assert_array_equal(grid.knots[:4], [-2.0] * 4)
        np.testing.assert_array_equal(grid.knots[-4:], [2.0] * 4)
        np.testing.assert_allclose(np.diff(grid.knots[3:9]), 0.8)

    @pytest.mark.parametrize("degree,num_basis", [(0, 8), (3, 3)])
    def test_invalid_shape(self, degree, num_basis):
        with pytest.raises(ConfigurationError):
            SplineGrid(degree=degree, num_basis=num_basis)

    def test_empty_range(self):
        with pytest.raises(ConfigurationError):
            SplineGrid(interior_range=(1.0, 1.0))

    def test_non_uniform_knots(self):
        knots = np.array([0, 0, 0, 0, 0.1, 0.5, 1, 1, 1, 1], dtype=float)
        with pytest.raises(ConfigurationError):
            SplineGrid(degree=3, num_basis=6, interior_range=(0.0, 1.0), knots=knots)

    def test_explicit_uniform_knots(self):
        knots = np.array([0, 0, 0, 0, 0.5, 1, 1, 1, 1], dtype=float)
        grid = SplineGrid(degree=3, num_basis=5, interior_range=(0.0, 1.0), knots=knots)
        assert grid.window == 4


class TestBasisWindow:
    def test_partition_of_unity(self, rng):
        grid = SplineGrid()
        x = rng.uniform(-2.0, 2.0, size=(7, 11))
        offsets, values = basis_window(x, grid)
        assert offsets.shape == (7, 11)
        assert values.shape == (7, 11, grid.degree + 1)
        np.testing.assert_allclose(values.sum(axis=-1), 1.0, atol=1e-12)
        assert offsets.min() >= 0
        assert offsets.max() <= grid.num_basis - grid.window

    def test_right_end_selects_last_basis(self):
        grid = SplineGrid()
        offset, values = basis_eval(2.0, grid)
        assert offset == grid.num_basis - grid.window
        np.testing.assert_allclose(values, [0.0, 0.0, 0.0, 1.0], atol=1e-15)

    def test_matches_full_recursion_at_knots(self):
        grid = SplineGrid(degree=2, num_basis=6)
        for x in np.unique(grid.knots):
            offset, values = basis_eval(x, grid)
            np.testing.assert_allclose(
                window_to_full(offset, values, grid.num_basis), naive_basis(x, grid), atol=1e-14
            )

    def test_counts_basis_evaluations(self):
        grid = SplineGrid()
        with counting() as registry:
            basis_window(np.zeros(10), grid)
            assert registry.get(BASIS_EVALS) == 10 * grid.window

    def test_derivative_zero_outside_range(self):
        grid = SplineGrid()
        _, derivs = derivative_window(np.array([-3.0, 2.5]), grid)
        np.testing.assert_array_equal(derivs, 0.0)

    def test_derivatives_sum_to_zero(self, rng):
        grid = SplineGrid()
        _, derivs = derivative_window(rng.uniform(-1.9, 1.9, size=50), grid)
        np.testing.assert_allclose(derivs.sum(axis=-1), 0.0, atol=1e-12)


class TestSplineApply:
    def test_reproduces_linear_function(self, rng):
        grid = SplineGrid()
        x = rng.uniform(-2.0, 2.0, size=40)
        np.testing.assert_allclose(spline_apply(x, greville(grid), grid), x, atol=1e-12)

    def test_constant_outside_range(self, rng):
        grid = SplineGrid()
        alpha = rng.standard_normal(grid.num_basis)
        assert spline_apply(5.0, alpha, grid) == pytest.approx(spline_apply(2.0, alpha, grid))
        assert spline_apply(-7.0, alpha, grid) == pytest.approx(alpha[0])

    def test_scalar_input_returns_float(self):
        grid = SplineGrid()
        assert isinstance(spline_apply(0.3, SplineCoeffs(np.ones(grid.num_basis)), grid), float)

    def test_wrong_coefficient_count(self):
        with pytest.raises(ShapeError):
            spline_apply(0.0, np.ones(3), SplineGrid())

    def test_non_finite_coefficients(self):
        with pytest.raises(ConfigurationError):
            SplineCoeffs(np.array([0.0, np.nan]))


class TestSplineOracles:
    def test_reference_checks_pass(self):
        results = run_oracles("spline")
        assert len(results) == 4
        for result in results:
            assert result.passed, f"{result.name}: {result.value} > {result.tolerance}"
