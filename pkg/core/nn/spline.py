"""
Clamped uniform B-spline bases with local support

At any point only degree + 1 basis functions are nonzero, so evaluation
costs O(p + 1) per point regardless of the number of basis functions.
Windows are evaluated with the Cox-de Boor triangle restricted to the
active knot span.
"""
from dataclasses import dataclass, field
from typing import Optional, Tuple, Union

import numpy as np

import config
from core.exceptions import ConfigurationError, ShapeError
from core.nn.instrumentation import BASIS_EVALS, REGISTRY


@dataclass(eq=False)
class SplineGrid:
    """Knot layout shared by a bank of spline functions"""
    degree: int = config.SPLINE_DEGREE
    num_basis: int = config.SPLINE_NUM_BASIS
    interior_range: Tuple[float, float] = config.SPLINE_GRID_RANGE
    knots: Optional[np.ndarray] = field(default=None)

    def __post_init__(self):
        if self.degree < 1:
            raise ConfigurationError(f"Spline degree must be >= 1, got {self.degree}")
        if self.num_basis < self.degree + 1:
            raise ConfigurationError(
                f"num_basis must be >= degree + 1 ({self.degree + 1}), got {self.num_basis}"
            )
        lo, hi = (float(v) for v in self.interior_range)
        if not lo < hi:
            raise ConfigurationError(f"Empty grid range [{lo}, {hi}]")
        self.interior_range = (lo, hi)

        if self.knots is None:
            inner = np.linspace(lo, hi, self.num_basis - self.degree + 1)
            self.knots = np.concatenate([
                np.full(self.degree, lo), inner, np.full(self.degree, hi)
            ])
        else:
            self.knots = np.asarray(self.knots, dtype=np.float64)
        self._validate_knots()

    def _validate_knots(self) -> None:
        knots = self.knots
        p, lo, hi = self.degree, *self.interior_range
        if knots.ndim != 1 or knots.size != self.num_basis + p + 1:
            raise ConfigurationError(
                f"Expected {self.num_basis + p + 1} knots, got {knots.size}"
            )
        if np.any(np.diff(knots) < 0):
            raise ConfigurationError("Knots must be non-decreasing")
        if np.any(knots[:p + 1] != lo) or np.any(knots[-(p + 1):] != hi):
            raise ConfigurationError("End knots must be repeated degree + 1 times")
        spans = np.diff(knots[p:self.num_basis + 1])
        if np.any(spans <= 0) or not np.allclose(spans, spans[0], rtol=1e-12, atol=0.0):
            raise ConfigurationError("Interior knots must be uniformly spaced")

    @property
    def window(self) -> int:
        return self.degree + 1

    def clamp(self, x: np.ndarray) -> np.ndarray:
        lo, hi = self.interior_range
        return np.clip(x, lo, hi)

    def find_span(self, x: np.ndarray) -> np.ndarray:
        """Index i with knots[i] <= x < knots[i + 1], the last span closed on the right"""
        span = np.searchsorted(self.knots, x, side="right") - 1
        return np.clip(span, self.degree, self.num_basis - 1)


@dataclass(eq=False)
class SplineCoeffs:
    """Coefficients alpha_m of one spline function"""
    alpha: np.ndarray

    def __post_init__(self):
        self.alpha = np.asarray(self.alpha, dtype=np.float64)
        if self.alpha.ndim != 1:
            raise ShapeError(f"Spline coefficients must be 1-D, got shape {self.alpha.shape}")
        if not np.isfinite(self.alpha).all():
            raise ConfigurationError("Spline coefficients must be finite")


def _triangle(x: np.ndarray, span: np.ndarray, knots: np.ndarray, degree: int) -> np.ndarray:
    """Nonzero basis values of the given degree on each span, shape (..., degree + 1)"""
    values = np.zeros(x.shape + (degree + 1,))
    values[..., 0] = 1.0
    left = np.zeros(x.shape + (degree + 1,))
    right = np.zeros(x.shape + (degree + 1,))
    for j in range(1, degree + 1):
        left[..., j] = x - knots[span + 1 - j]
        right[..., j] = knots[span + j] - x
        saved = np.zeros(x.shape)
        for r in range(j):
            temp = values[..., r] / (right[..., r + 1] + left[..., j - r])
            values[..., r] = saved + right[..., r + 1] * temp
            saved = left[..., j - r] * temp
        values[..., j] = saved
    return values


def basis_window(x: np.ndarray, grid: SplineGrid) -> Tuple[np.ndarray, np.ndarray]:
    """
    Active basis window for every element of x

    Args:
        x: Array of any shape, clamped into the grid range
        grid: Knot layout

    Returns:
        (offsets, values): offsets has the shape of x and holds the index of
        the first active basis function; values has a trailing axis of
        degree + 1 entries
    """
    x = grid.clamp(np.asarray(x, dtype=np.float64))
    span = grid.find_span(x)
    values = _triangle(x, span, grid.knots, grid.degree)
    REGISTRY.increment(BASIS_EVALS, x.size * grid.window)
    return span - grid.degree, values


def derivative_window(x: np.ndarray, grid: SplineGrid) -> Tuple[np.ndarray, np.ndarray]:
    """
    Derivatives of the active window, zero outside the grid range

    Uses B'_{i,p} = p / (t_{i+p} - t_i) B_{i,p-1} - p / (t_{i+p+1} - t_{i+1}) B_{i+1,p-1}.
    """
    raw = np.asarray(x, dtype=np.float64)
    lo, hi = grid.interior_range
    inside = (raw >= lo) & (raw <= hi)
    x = grid.clamp(raw)
    p, knots = grid.degree, grid.knots
    span = grid.find_span(x)
    lower = _triangle(x, span, knots, p - 1)

    derivs = np.zeros(x.shape + (p + 1,))
    for r in range(p + 1):
        i = span - p + r
        if r >= 1:
            denom = knots[i + p] - knots[i]
            safe = np.where(denom > 0, denom, 1.0)
            derivs[..., r] += np.where(denom > 0, p / safe, 0.0) * lower[..., r - 1]
        if r <= p - 1:
            denom = knots[i + p + 1] - knots[i + 1]
            safe = np.where(denom > 0, denom, 1.0)
            derivs[..., r] -= np.where(denom > 0, p / safe, 0.0) * lower[..., r]
    derivs *= inside[..., None]
    return span - p, derivs


def basis_eval(x: float, grid: SplineGrid) -> Tuple[int, np.ndarray]:
    """Offset and degree + 1 nonzero basis values at a single point"""
    offset, values = basis_window(np.asarray(x, dtype=np.float64), grid)
    return int(offset), values


def basis_derivative(x: float, grid: SplineGrid) -> Tuple[int, np.ndarray]:
    offset, derivs = derivative_window(np.asarray(x, dtype=np.float64), grid)
    return int(offset), derivs


def spline_apply(x: Union[float, np.ndarray], coeffs: Union[SplineCoeffs, np.ndarray],
                 grid: SplineGrid) -> Union[float, np.ndarray]:
    """phi(x) = sum_m alpha_m B_m(x) using only the active window"""
    alpha = coeffs.alpha if isinstance(coeffs, SplineCoeffs) else np.asarray(coeffs, dtype=np.float64)
    if alpha.shape != (grid.num_basis,):
        raise ShapeError(f"Expected {grid.num_basis} coefficients, got shape {alpha.shape}")
    offsets, values = basis_window(x, grid)
    index = offsets[..., None] + np.arange(grid.window)
    result = np.sum(alpha[index] * values, axis=-1)
    if np.ndim(x) == 0:
        return float(result)
    return result
