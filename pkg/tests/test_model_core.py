import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import make_theta
from oracles import cox_de_boor
from persched.errors import DataError, DomainError
from persched.model import (
    hazard,
    lmm_mean,
    lmm_slope,
    log_baseline_hazard,
    psa_fixed_design,
    psa_random_design,
)
from persched.params import PRIAS_ALPHA, default_theta, zero_random_effects
from persched.types import (
    FunctionalForm,
    ModelSpec,
    PSplineLogHazard,
    RandomEffects,
    Theta,
    WeibullHazard,
)
from persched.splines import SplineBasis


class TestFixedDesign:
    def test_centering_at_reference_age(self, prias_spec):
        x = psa_fixed_design(0.0, 70.0, prias_spec)
        assert x[1] == 0.0 and x[2] == 0.0

    def test_age_deviation_columns(self, prias_spec):
        x = psa_fixed_design(0.0, 75.0, prias_spec)
        assert x[1] == pytest.approx(5.0)
        assert x[2] == pytest.approx(25.0)

    def test_spline_block_equals_basis_oracle(self, prias_spec):
        x = psa_fixed_design(2.0, 70.0, prias_spec)
        basis = prias_spec.fixed_basis
        expected = cox_de_boor(2.0, basis.degree, list(basis.internal_knots), basis.boundary)
        np.testing.assert_allclose(x[3:], expected[1:], atol=1e-12)

    def test_length(self, prias_spec):
        assert len(psa_fixed_design(1.0, 70.0, prias_spec)) == 7

    def test_spline_block_vanishes_at_induction(self, prias_spec):
        x = psa_fixed_design(0.0, 70.0, prias_spec)
        assert np.all(x[3:] == 0.0)


class TestRandomDesign:
    def test_at_zero(self, prias_spec):
        z = psa_random_design(0.0, prias_spec)
        basis = prias_spec.random_basis
        expected = cox_de_boor(0.0, basis.degree, list(basis.internal_knots), basis.boundary)
        np.testing.assert_allclose(z, np.concatenate([[1.0], expected[1:]]), atol=1e-12)

    def test_length_is_three(self, prias_spec):
        for t in (0.0, 0.1, 1.0, 6.9, 7.0, 12.0):
            assert len(psa_random_design(t, prias_spec)) == 3

    def test_continuity_on_grid(self, prias_spec):
        eps = 1e-6
        for t in np.linspace(0.0, 8.0, 33):
            a = psa_random_design(t, prias_spec)
            b = psa_random_design(t + eps, prias_spec)
            assert np.max(np.abs(a - b)) < 1e-4


class TestLmmMean:
    def test_shipped_intercept_at_induction(self, prias_spec, prias_theta, b_zero):
        # all spline columns vanish at t = 0, so the level is the intercept
        assert lmm_mean(0.0, 70.0, prias_theta, b_zero, prias_spec) == pytest.approx(2.455)

    def test_constant_random_intercept(self, prias_spec):
        theta = make_theta(prias_spec, baseline=WeibullHazard(1.0, 2.0))
        b = RandomEffects(np.array([3.25, 0.0, 0.0]))
        for t in (0.0, 0.3, 2.0, 6.0):
            assert lmm_mean(t, 70.0, theta, b, prias_spec) == pytest.approx(3.25)

    def test_matches_dot_product_oracle(self, prias_spec):
        rng = np.random.default_rng(11)
        theta = make_theta(prias_spec, beta=rng.normal(size=7), baseline=WeibullHazard(1, 2))
        b = RandomEffects(rng.normal(size=3))
        t, age = 1.37, 64.0
        x = psa_fixed_design(t, age, prias_spec)
        z = psa_random_design(t, prias_spec)
        expected = sum(xi * bi for xi, bi in zip(x, theta.beta)) + sum(
            zi * bi for zi, bi in zip(z, b.b)
        )
        assert lmm_mean(t, age, theta, b, prias_spec) == pytest.approx(expected, abs=1e-12)

    def test_linear_in_beta(self, prias_spec):
        rng = np.random.default_rng(4)
        b = RandomEffects(rng.normal(size=3))
        beta1, beta2 = rng.normal(size=7), rng.normal(size=7)
        t1 = make_theta(prias_spec, beta=beta1, baseline=WeibullHazard(1, 2))
        t2 = make_theta(prias_spec, beta=beta2, baseline=WeibullHazard(1, 2))
        t12 = make_theta(prias_spec, beta=beta1 + beta2, baseline=WeibullHazard(1, 2))
        b0 = RandomEffects(np.zeros(3))
        m12 = lmm_mean(1.7, 72.0, t12, b, prias_spec)
        m1 = lmm_mean(1.7, 72.0, t1, b, prias_spec)
        m2 = lmm_mean(1.7, 72.0, t2, b0, prias_spec)
        assert m12 == pytest.approx(m1 + m2, abs=1e-10)

    def test_dimension_mismatch(self, prias_spec):
        theta = make_theta(prias_spec, baseline=WeibullHazard(1, 2))
        with pytest.raises(DataError):
            lmm_mean(1.0, 70.0, theta, RandomEffects(np.zeros(5)), prias_spec)


class TestLmmSlope:
    def test_zero_without_spline_coefficients(self, prias_spec):
        theta = make_theta(prias_spec, beta=[4.0, 0.1, 0.2, 0, 0, 0, 0],
                           baseline=WeibullHazard(1, 2))
        b = RandomEffects(np.array([1.0, 0.0, 0.0]))
        assert lmm_slope(2.0, 80.0, theta, b, prias_spec) == pytest.approx(0.0, abs=1e-14)

    @pytest.mark.parametrize("t", [0.3, 1.2, 5.0])
    def test_finite_difference_agreement(self, prias_spec, prias_theta, t):
        rng = np.random.default_rng(7)
        b = RandomEffects(rng.normal(size=3))
        h = 1e-5
        numeric = (
            lmm_mean(t + h, 70.0, prias_theta, b, prias_spec)
            - lmm_mean(t - h, 70.0, prias_theta, b, prias_spec)
        ) / (2 * h)
        assert lmm_slope(t, 70.0, prias_theta, b, prias_spec) == pytest.approx(numeric, abs=1e-6)

    def test_age_invariance(self, prias_spec, prias_theta, b_zero):
        s1 = lmm_slope(2.0, 55.0, prias_theta, b_zero, prias_spec)
        s2 = lmm_slope(2.0, 84.0, prias_theta, b_zero, prias_spec)
        assert s1 == pytest.approx(s2, abs=1e-14)

    def test_flat_beyond_boundary(self, prias_spec, prias_theta, b_zero):
        assert lmm_slope(8.5, 70.0, prias_theta, b_zero, prias_spec) == 0.0


class TestLogBaselineHazard:
    def test_exponential_is_constant(self):
        base = WeibullHazard(shape=1.0, scale=2.0)
        for t in (0.1, 1.0, 9.0):
            assert log_baseline_hazard(t, base) == pytest.approx(math.log(0.5))

    def test_weibull_formula_first_subgroup(self):
        base = WeibullHazard(shape=1.5, scale=4.0)
        assert log_baseline_hazard(4.0, base) == pytest.approx(math.log(1.5 / 4.0))

    def test_pspline_constant_coefficients(self):
        basis = SplineBasis(degree=3, internal_knots=(1.0, 2.0), boundary=(0.0, 5.0))
        base = PSplineLogHazard(basis=basis, intercept=-1.25, coefficients=(0.0,) * basis.dim)
        for t in (0.2, 2.7, 5.0):
            assert log_baseline_hazard(t, base) == pytest.approx(-1.25)

    def test_domain_error_nonpositive(self):
        with pytest.raises(DomainError):
            log_baseline_hazard(0.0, WeibullHazard(1.0, 1.0))
        with pytest.raises(DomainError):
            log_baseline_hazard(-1.0, WeibullHazard(1.0, 1.0))


class TestHazard:
    def test_unit_slope_increase_multiplies_hazard(self, prias_spec, prias_theta):
        # adjust the two random spline coefficients so that m(t0) is unchanged
        # while m'(t0) increases by exactly one
        t0 = 2.0
        z = np.array(psa_random_design(t0, prias_spec))
        lo, hi = prias_spec.random_basis.internal_knots[0], prias_spec.random_basis.boundary[1]
        span = hi - lo
        b1 = RandomEffects(np.array([0.4, 0.3, -0.2]))
        c2 = span * z[1] / (z[1] + z[2])
        c1 = -c2 * z[2] / z[1]
        delta = np.array([0.0, c1, c2])
        m1 = lmm_mean(t0, 70.0, prias_theta, b1, prias_spec)
        b2 = RandomEffects(b1.b + delta)
        m2 = lmm_mean(t0, 70.0, prias_theta, b2, prias_spec)
        assert m2 == pytest.approx(m1, abs=1e-10)
        s1 = lmm_slope(t0, 70.0, prias_theta, b1, prias_spec)
        s2 = lmm_slope(t0, 70.0, prias_theta, b2, prias_spec)
        assert s2 - s1 == pytest.approx(1.0, abs=1e-10)
        ratio = hazard(t0, 70.0, prias_theta, b2, prias_spec) / hazard(
            t0, 70.0, prias_theta, b1, prias_spec
        )
        assert ratio == pytest.approx(math.exp(PRIAS_ALPHA[1]), abs=1e-9)
        assert ratio == pytest.approx(11.10, abs=0.01)

    def test_reduces_to_baseline(self, prias_spec):
        theta = make_theta(prias_spec, baseline=WeibullHazard(1.5, 4.0))
        b = RandomEffects(np.array([1.0, -0.5, 0.3]))
        for t in (0.5, 2.0, 6.0):
            expected = math.exp(log_baseline_hazard(t, theta.baseline))
            assert hazard(t, 81.0, theta, b, prias_spec) == pytest.approx(expected, rel=1e-12)

    def test_matches_formula_oracle(self, prias_spec, prias_theta):
        rng = np.random.default_rng(3)
        b = RandomEffects(rng.normal(size=3) * 0.5)
        t, age = 3.3, 66.0
        m = lmm_mean(t, age, prias_theta, b, prias_spec)
        slope = lmm_slope(t, age, prias_theta, b, prias_spec)
        dev = age - 70.0
        expected = math.exp(
            log_baseline_hazard(t, prias_theta.baseline)
            + prias_theta.gamma[0] * dev
            + prias_theta.gamma[1] * dev**2
            + prias_theta.alpha[0] * m
            + prias_theta.alpha[1] * slope
        )
        assert hazard(t, age, prias_theta, b, prias_spec) == pytest.approx(expected, rel=1e-12)

    def test_value_only_form_ignores_slope(self):
        spec = ModelSpec(functional_form=FunctionalForm.VALUE_ONLY)
        theta = make_theta(spec, alpha=(0.5,), baseline=WeibullHazard(1.0, 1.0))
        rng = np.random.default_rng(5)
        b = RandomEffects(rng.normal(size=3))
        m = lmm_mean(1.5, 70.0, theta, b, spec)
        expected = math.exp(math.log(1.0) + 0.5 * m)
        assert hazard(1.5, 70.0, theta, b, spec) == pytest.approx(expected, rel=1e-12)

    @given(st.floats(min_value=-2.0, max_value=2.0, allow_nan=False))
    @settings(max_examples=30, deadline=None)
    def test_intercept_shift_scales_uniformly(self, c):
        basis = SplineBasis(degree=2, internal_knots=(1.0,), boundary=(0.0, 8.0))
        spec = ModelSpec()
        base1 = PSplineLogHazard(basis=basis, intercept=-1.0,
                                 coefficients=(0.2, -0.1, 0.3, 0.05))
        base2 = PSplineLogHazard(basis=basis, intercept=-1.0 + c,
                                 coefficients=(0.2, -0.1, 0.3, 0.05))
        theta1 = make_theta(spec, baseline=base1)
        theta2 = make_theta(spec, baseline=base2)
        b = RandomEffects(np.zeros(3))
        for t in (0.5, 3.0, 7.5):
            h1 = hazard(t, 70.0, theta1, b, spec)
            h2 = hazard(t, 70.0, theta2, b, spec)
            assert h2 == pytest.approx(h1 * math.exp(c), rel=1e-10)

    def test_positive_and_finite(self, prias_spec, prias_theta):
        rng = np.random.default_rng(12)
        for _ in range(25):
            b = RandomEffects(rng.normal(size=3))
            t = float(rng.uniform(0.01, 15.0))
            h = hazard(t, float(rng.uniform(55, 85)), prias_theta, b, prias_spec)
            assert h > 0 and math.isfinite(h)
