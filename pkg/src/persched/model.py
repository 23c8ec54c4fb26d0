"""Pure evaluation of the longitudinal mean, its slope, and the hazard.

Design rows follow the layout ``[1, age_dev, age_dev^2, spline block]`` for
fixed effects and ``[1, spline block]`` for random effects, where both spline
blocks are the clamped basis with the first function dropped (absorbed by the
intercepts).  Beyond the spline boundary the basis values are held constant,
so the mean extrapolates flat and the slope is zero there.

Every function has a vectorized ``*_matrix`` form used by the hot paths; the
scalar forms are thin wrappers.
"""

from __future__ import annotations

import numpy as np

from .errors import DataError, DomainError
from .splines import bspline_basis, bspline_basis_derivative
from .types import (
    BaselineHazard,
    FunctionalForm,
    ModelSpec,
    PSplineLogHazard,
    RandomEffects,
    Theta,
    WeibullHazard,
)


def check_dimensions(theta: Theta, b: RandomEffects | None, spec: ModelSpec) -> None:
    if theta.beta.shape[0] != spec.n_fixed:
        raise DataError(f"beta has length {theta.beta.shape[0]}, spec needs {spec.n_fixed}")
    if theta.gamma.shape[0] != spec.n_gamma:
        raise DataError(f"gamma has length {theta.gamma.shape[0]}, spec needs {spec.n_gamma}")
    if theta.alpha.shape[0] != spec.functional_form.alpha_len:
        raise DataError(
            f"alpha has length {theta.alpha.shape[0]}, "
            f"functional form needs {spec.functional_form.alpha_len}"
        )
    if theta.q != spec.q:
        raise DataError(f"D is {theta.q}x{theta.q}, spec needs q = {spec.q}")
    if b is not None and b.b.shape[0] != spec.q:
        raise DataError(f"random effects have length {b.b.shape[0]}, spec needs {spec.q}")


def _clamped(times: np.ndarray, low: float, high: float) -> np.ndarray:
    return np.clip(times, low, high)


def spline_block_matrix(times: np.ndarray, basis, derivative: bool = False) -> np.ndarray:
    """Basis (or derivative) columns with the first function dropped.

    Times beyond the boundary are clamped, i.e. the block is constant outside
    and its derivative is zero there.
    """
    times = np.atleast_1d(np.asarray(times, dtype=float))
    low, high = basis.boundary
    clamped = _clamped(times, low, high)
    if derivative:
        values = bspline_basis_derivative(clamped, basis)
        outside = (times < low) | (times > high)
        values[outside] = 0.0
    else:
        values = bspline_basis(clamped, basis)
    return values[:, 1:]


def psa_fixed_design_matrix(times, age: float, spec: ModelSpec) -> np.ndarray:
    times = np.atleast_1d(np.asarray(times, dtype=float))
    block = spline_block_matrix(times, spec.fixed_basis)
    ones = np.ones((len(times), 1))
    if spec.include_age_terms:
        dev = age - spec.age_center
        age_cols = np.full((len(times), 2), (dev, dev * dev))
        return np.hstack([ones, age_cols, block])
    return np.hstack([ones, block])


def psa_fixed_slope_matrix(times, spec: ModelSpec) -> np.ndarray:
    """Time derivative of the fixed design (age columns are constant in t)."""
    times = np.atleast_1d(np.asarray(times, dtype=float))
    block = spline_block_matrix(times, spec.fixed_basis, derivative=True)
    zeros = np.zeros((len(times), 3 if spec.include_age_terms else 1))
    return np.hstack([zeros, block])


def psa_random_design_matrix(times, spec: ModelSpec) -> np.ndarray:
    times = np.atleast_1d(np.asarray(times, dtype=float))
    block = spline_block_matrix(times, spec.random_basis)
    return np.hstack([np.ones((len(times), 1)), block])


def psa_random_slope_matrix(times, spec: ModelSpec) -> np.ndarray:
    times = np.atleast_1d(np.asarray(times, dtype=float))
    block = spline_block_matrix(times, spec.random_basis, derivative=True)
    return np.hstack([np.zeros((len(times), 1)), block])


def psa_fixed_design(t: float, age: float, spec: ModelSpec) -> np.ndarray:
    """Fixed-effects design row x(t)."""
    return psa_fixed_design_matrix([t], age, spec)[0]


def psa_random_design(t: float, spec: ModelSpec) -> np.ndarray:
    """Random-effects design row z(t)."""
    return psa_random_design_matrix([t], spec)[0]


def lmm_mean(t: float, age: float, theta: Theta, b: RandomEffects, spec: ModelSpec) -> float:
    """Measurement-error-free log2 PSA level m(t)."""
    check_dimensions(theta, b, spec)
    return float(psa_fixed_design(t, age, spec) @ theta.beta + psa_random_design(t, spec) @ b.b)


def lmm_slope(t: float, age: float, theta: Theta, b: RandomEffects, spec: ModelSpec) -> float:
    """Velocity of the log2 PSA level, d m(t) / dt."""
    check_dimensions(theta, b, spec)
    return float(
        psa_fixed_slope_matrix([t], spec)[0] @ theta.beta
        + psa_random_slope_matrix([t], spec)[0] @ b.b
    )


def log_baseline_hazard_values(times, baseline: BaselineHazard) -> np.ndarray:
    times = np.atleast_1d(np.asarray(times, dtype=float))
    if np.any(times <= 0):
        raise DomainError("baseline hazard is defined for t > 0")
    if isinstance(baseline, WeibullHazard):
        k, lam = baseline.shape, baseline.scale
        return np.log(k / lam) + (k - 1.0) * np.log(times / lam)
    # full penalized basis; the difference penalty resolves the intercept overlap
    full = bspline_basis(_clamped(times, *baseline.basis.boundary), baseline.basis)
    return baseline.intercept + full @ np.asarray(baseline.coefficients)


def log_baseline_hazard(t: float, baseline: BaselineHazard) -> float:
    """log h0(t); Weibull or penalized-spline form."""
    return float(log_baseline_hazard_values([t], baseline)[0])


def log_hazard_values(times, age: float, theta: Theta, b: RandomEffects, spec: ModelSpec) -> np.ndarray:
    times = np.atleast_1d(np.asarray(times, dtype=float))
    out = log_baseline_hazard_values(times, theta.baseline)
    if spec.include_age_terms:
        dev = age - spec.age_center
        out = out + theta.gamma[0] * dev + theta.gamma[1] * dev * dev
    m = psa_fixed_design_matrix(times, age, spec) @ theta.beta + psa_random_design_matrix(times, spec) @ b.b
    out = out + theta.alpha[0] * m
    if spec.functional_form is FunctionalForm.VALUE_AND_SLOPE:
        slope = psa_fixed_slope_matrix(times, spec) @ theta.beta + psa_random_slope_matrix(times, spec) @ b.b
        out = out + theta.alpha[1] * slope
    return out


def hazard(t: float, age: float, theta: Theta, b: RandomEffects, spec: ModelSpec) -> float:
    """Reclassification hazard h(t) > 0 (per year)."""
    check_dimensions(theta, b, spec)
    return float(np.exp(log_hazard_values([t], age, theta, b, spec)[0]))
