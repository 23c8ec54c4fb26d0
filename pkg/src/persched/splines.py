"""Clamped B-spline bases on a bounded time interval.

The longitudinal mean and the log baseline hazard are both linear in a
clamped (open) B-spline basis.  The basis is a partition of unity on
``[low, high]``; evaluation outside the boundary is a domain error so that
callers are forced to make extrapolation explicit.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.interpolate import BSpline

from .errors import DataError, DomainError


@dataclass(frozen=True)
class SplineBasis:
    """A clamped B-spline family: degree, interior knots and boundary knots."""

    degree: int
    internal_knots: tuple[float, ...]
    boundary: tuple[float, float]

    def __post_init__(self):
        low, high = self.boundary
        if self.degree < 0:
            raise DataError(f"spline degree must be >= 0, got {self.degree}")
        if not low < high:
            raise DataError(f"boundary must satisfy low < high, got {self.boundary}")
        knots = tuple(float(k) for k in self.internal_knots)
        if any(not low < k < high for k in knots):
            raise DataError(f"internal knots {knots} must lie strictly inside {self.boundary}")
        if any(b <= a for a, b in zip(knots, knots[1:])):
            raise DataError(f"internal knots must be strictly increasing, got {knots}")
        object.__setattr__(self, "internal_knots", knots)
        object.__setattr__(self, "boundary", (float(low), float(high)))

    @property
    def dim(self) -> int:
        """Number of basis functions (interior knots + degree + 1)."""
        return len(self.internal_knots) + self.degree + 1

    @property
    def knot_vector(self) -> np.ndarray:
        low, high = self.boundary
        return np.concatenate(
            [
                np.full(self.degree + 1, low),
                np.asarray(self.internal_knots, dtype=float),
                np.full(self.degree + 1, high),
            ]
        )


@lru_cache(maxsize=128)
def _bspline_for(basis: SplineBasis) -> BSpline:
    return BSpline(basis.knot_vector, np.eye(basis.dim), basis.degree)


@lru_cache(maxsize=128)
def _bspline_derivative_for(basis: SplineBasis) -> BSpline:
    return _bspline_for(basis).derivative()


def _check_domain(t: np.ndarray, basis: SplineBasis) -> None:
    low, high = basis.boundary
    if np.any(t < low) or np.any(t > high):
        raise DomainError(
            f"time outside spline boundary [{low}, {high}]; clamp or extrapolate explicitly"
        )


def bspline_basis(t, basis: SplineBasis) -> np.ndarray:
    """Evaluate all basis functions at ``t`` (scalar or array).

    Returns shape ``(dim,)`` for scalar ``t`` and ``(len(t), dim)`` otherwise.
    The values are nonnegative and sum to one at every point of the boundary
    interval.
    """
    arr = np.asarray(t, dtype=float)
    _check_domain(arr, basis)
    values = _bspline_for(basis)(arr)
    return values


def bspline_basis_derivative(t, basis: SplineBasis) -> np.ndarray:
    """First derivative of every basis function at ``t``.

    Columns sum to zero (derivative of the partition of unity).  A degree-0
    basis is piecewise constant, so its derivative is zero everywhere the
    basis is defined.
    """
    arr = np.asarray(t, dtype=float)
    _check_domain(arr, basis)
    if basis.degree == 0:
        return np.zeros(arr.shape + (basis.dim,))
    return _bspline_derivative_for(basis)(arr)
