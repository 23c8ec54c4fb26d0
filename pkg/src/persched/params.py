"""Fitted parameter values shipped with the package.

These are the posterior means of the joint model fitted to the PRIAS cohort
(the cohort itself is not distributable).  They drive the bundled
demonstration model and serve as ground truth for the simulation study.
"""

from __future__ import annotations

import numpy as np

from .types import ModelSpec, RandomEffects, Theta, WeibullHazard

# Longitudinal sub-model: intercept, (age-70), (age-70)^2, four spline columns.
PRIAS_BETA = (2.455, 0.003, -0.001, -0.006, 0.228, 0.140, 0.303)

# Relative-risk sub-model: baseline age terms and the (value, velocity) association.
PRIAS_GAMMA = (0.037, -0.001)
PRIAS_ALPHA = (-0.049, 2.407)

PRIAS_SIGMA = 0.324

PRIAS_D = (
    (0.409, 0.105, -0.140),
    (0.105, 1.725, 0.431),
    (-0.140, 0.431, 1.326),
)

# Weibull (shape, scale) of the three simulation subgroups, ordered from
# fastest to slowest progression.
SUBGROUP_WEIBULL = ((1.5, 4.0), (3.0, 5.0), (4.5, 6.0))

# Baseline used by the bundled demonstration model.  The cohort-level baseline
# was spline-shaped and is not shipped; the middle simulation subgroup is a
# reasonable stand-in for a mixed surveillance population.
DEMO_BASELINE = WeibullHazard(shape=3.0, scale=5.0)


def default_model_spec() -> ModelSpec:
    return ModelSpec()


def default_theta(baseline=None) -> Theta:
    """Shipped posterior-mean parameter vector."""
    return Theta(
        beta=np.array(PRIAS_BETA),
        gamma=np.array(PRIAS_GAMMA),
        alpha=np.array(PRIAS_ALPHA),
        sigma2=PRIAS_SIGMA**2,
        D=np.array(PRIAS_D),
        baseline=baseline if baseline is not None else DEMO_BASELINE,
    )


def subgroup_theta(index: int) -> Theta:
    """Shipped parameters with the baseline of simulation subgroup ``index`` (0..2)."""
    shape, scale = SUBGROUP_WEIBULL[index]
    return default_theta(baseline=WeibullHazard(shape=shape, scale=scale))


def zero_random_effects(spec: ModelSpec | None = None) -> RandomEffects:
    spec = spec or default_model_spec()
    return RandomEffects(b=np.zeros(spec.q))
