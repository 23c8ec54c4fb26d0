import math
import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from persched.likelihood import PriorConfig
from persched.mcmc import PosteriorSamples
from persched.params import default_model_spec, default_theta, zero_random_effects
from persched.types import (
    BiopsyRecord,
    CensoringInterval,
    FunctionalForm,
    ModelSpec,
    PatientHistory,
    PsaMeasurement,
    RandomEffects,
    Theta,
    WeibullHazard,
)
from persched.splines import SplineBasis


@pytest.fixture(scope="session")
def prias_spec():
    return default_model_spec()


@pytest.fixture(scope="session")
def prias_theta():
    return default_theta()


@pytest.fixture(scope="session")
def b_zero(prias_spec):
    return zero_random_effects(prias_spec)


@pytest.fixture(scope="session")
def linear_spec():
    """Linear time effect, random intercept + slope, no age terms (q = 2)."""
    basis = SplineBasis(degree=1, internal_knots=(), boundary=(0.0, 10.0))
    return ModelSpec(
        fixed_basis=basis,
        random_basis=basis,
        functional_form=FunctionalForm.VALUE_AND_SLOPE,
        include_age_terms=False,
    )


def make_theta(spec, *, beta=None, gamma=None, alpha=(0.0, 0.0), sigma2=0.09,
               D=None, baseline=None):
    """Theta with conforming dimensions for the given spec."""
    p = spec.n_fixed
    q = spec.q
    return Theta(
        beta=np.zeros(p) if beta is None else np.asarray(beta, dtype=float),
        gamma=np.zeros(spec.n_gamma) if gamma is None else np.asarray(gamma, dtype=float),
        alpha=np.asarray(alpha[: spec.functional_form.alpha_len], dtype=float),
        sigma2=sigma2,
        D=np.eye(q) if D is None else np.asarray(D, dtype=float),
        baseline=baseline if baseline is not None else WeibullHazard(1.0, 2.0),
    )


def constant_hazard_posterior(spec, rate: float, sigma2: float = 0.09):
    """Single-draw posterior with hazard identically equal to ``rate``."""
    theta = make_theta(spec, baseline=WeibullHazard(1.0, 1.0 / rate), sigma2=sigma2)
    return PosteriorSamples.from_thetas(spec, PriorConfig(), [theta])


def patient_after_biopsy(t: float, psa_points=()):
    psa = tuple(PsaMeasurement(tt, vv) for tt, vv in psa_points)
    biopsies = (BiopsyRecord(t, False),) if t > 0 else ()
    return PatientHistory(id="test", age_at_entry=70.0, psa=psa, biopsies=biopsies)
