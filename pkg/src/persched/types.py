"""Domain types: patient data, model parameters and the model specification.

All types are immutable after construction and validate their invariants
eagerly, so downstream numerical code can assume well-formed values.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import DataError
from .splines import SplineBasis

INF = math.inf


@dataclass(frozen=True)
class PsaMeasurement:
    """One PSA observation: years since induction and raw ng/mL level."""

    time: float
    psa: float

    def __post_init__(self):
        if not (self.time >= 0 and math.isfinite(self.time)):
            raise DataError(f"PSA time must be a finite nonnegative year, got {self.time}")
        if not (self.psa > 0 and math.isfinite(self.psa)):
            raise DataError(f"PSA must be positive (log2 transform must be finite), got {self.psa}")

    @property
    def log2_psa(self) -> float:
        """All model math runs on the log2 scale; raw ng/mL is stored."""
        return math.log2(self.psa)


@dataclass(frozen=True)
class BiopsyRecord:
    time: float
    upgraded: bool

    def __post_init__(self):
        if not (self.time > 0 and math.isfinite(self.time)):
            raise DataError(f"biopsy time must be a positive year, got {self.time}")


@dataclass(frozen=True)
class PatientHistory:
    """A subject's PSA stream and biopsy stream.

    Times are strictly increasing within each stream; at most one biopsy may
    be upgraded and, if present, it must be the last one (the subject leaves
    surveillance at that point).
    """

    id: str
    age_at_entry: float
    psa: tuple[PsaMeasurement, ...] = ()
    biopsies: tuple[BiopsyRecord, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "psa", tuple(self.psa))
        object.__setattr__(self, "biopsies", tuple(self.biopsies))
        psa_times = [m.time for m in self.psa]
        if any(b <= a for a, b in zip(psa_times, psa_times[1:])):
            raise DataError(f"patient {self.id}: PSA times must be strictly increasing")
        biopsy_times = [b.time for b in self.biopsies]
        if any(b <= a for a, b in zip(biopsy_times, biopsy_times[1:])):
            raise DataError(f"patient {self.id}: biopsy times must be strictly increasing")
        upgraded = [i for i, b in enumerate(self.biopsies) if b.upgraded]
        if len(upgraded) > 1:
            raise DataError(f"patient {self.id}: more than one upgraded biopsy")
        if upgraded and upgraded[0] != len(self.biopsies) - 1:
            raise DataError(f"patient {self.id}: an upgraded biopsy must be the last biopsy")

    @property
    def upgraded(self) -> bool:
        return bool(self.biopsies) and self.biopsies[-1].upgraded

    def psa_times(self) -> np.ndarray:
        return np.array([m.time for m in self.psa])

    def log2_psa_values(self) -> np.ndarray:
        return np.array([m.log2_psa for m in self.psa])

    def censoring_interval(self) -> "CensoringInterval":
        """Derive (l, r] from the biopsy stream.

        Upgraded at the last biopsy: the event lies between the penultimate
        and last biopsy.  Otherwise the subject is right-censored at the last
        biopsy (at 0 if none was taken yet).
        """
        if self.upgraded:
            l = self.biopsies[-2].time if len(self.biopsies) >= 2 else 0.0
            return CensoringInterval(l, self.biopsies[-1].time)
        l = self.biopsies[-1].time if self.biopsies else 0.0
        return CensoringInterval(l, INF)


@dataclass(frozen=True)
class CensoringInterval:
    """The event time is known to fall in (l, r]; r may be +inf.

    ``l == r`` encodes an exactly observed event time (this occurs for
    simulated training data, where the generator reveals the true time).
    """

    l: float
    r: float

    def __post_init__(self):
        if not (0 <= self.l <= self.r):
            raise DataError(f"censoring interval must satisfy 0 <= l <= r, got ({self.l}, {self.r})")
        if self.l == self.r and math.isinf(self.l):
            raise DataError("degenerate interval at infinity")

    @property
    def exact(self) -> bool:
        return self.l == self.r

    @property
    def right_censored(self) -> bool:
        return math.isinf(self.r)


class FunctionalForm(Enum):
    """How the longitudinal process enters the hazard linear predictor."""

    VALUE_ONLY = "value"
    VALUE_AND_SLOPE = "value_and_slope"

    @property
    def alpha_len(self) -> int:
        return 1 if self is FunctionalForm.VALUE_ONLY else 2


@dataclass(frozen=True)
class WeibullHazard:
    """h0(t) = (k / lam) * (t / lam)^(k-1)."""

    shape: float
    scale: float

    def __post_init__(self):
        if not (self.shape > 0 and self.scale > 0):
            raise DataError(f"Weibull shape and scale must be positive, got {self.shape}, {self.scale}")


@dataclass(frozen=True)
class PSplineLogHazard:
    """log h0(t) = intercept + coefficients . basis(t), with a difference penalty."""

    basis: SplineBasis
    intercept: float
    coefficients: tuple[float, ...]
    penalty_order: int = 2

    def __post_init__(self):
        object.__setattr__(self, "coefficients", tuple(float(c) for c in self.coefficients))
        if len(self.coefficients) != self.basis.dim:
            raise DataError(
                f"baseline needs {self.basis.dim} coefficients, got {len(self.coefficients)}"
            )
        if self.penalty_order < 1:
            raise DataError("penalty order must be a positive integer")


BaselineHazard = WeibullHazard | PSplineLogHazard


def _as_readonly(a) -> np.ndarray:
    arr = np.array(a, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class Theta:
    """One draw of all joint-model parameters."""

    beta: np.ndarray
    gamma: np.ndarray
    alpha: np.ndarray
    sigma2: float
    D: np.ndarray
    baseline: BaselineHazard

    def __post_init__(self):
        object.__setattr__(self, "beta", _as_readonly(self.beta))
        object.__setattr__(self, "gamma", _as_readonly(self.gamma))
        object.__setattr__(self, "alpha", _as_readonly(self.alpha))
        object.__setattr__(self, "D", _as_readonly(self.D))
        if not self.sigma2 > 0:
            raise DataError(f"sigma2 must be positive, got {self.sigma2}")
        D = self.D
        if D.ndim != 2 or D.shape[0] != D.shape[1]:
            raise DataError(f"D must be square, got shape {D.shape}")
        if not np.allclose(D, D.T, atol=1e-10):
            raise DataError("D must be symmetric")
        eigvals = np.linalg.eigvalsh(D)
        if eigvals.min() <= 0:
            raise DataError(f"D must be positive definite, min eigenvalue {eigvals.min():.3g}")
        if self.alpha.shape[0] not in (1, 2):
            raise DataError(f"alpha must have length 1 or 2, got {self.alpha.shape[0]}")

    @property
    def q(self) -> int:
        return self.D.shape[0]


@dataclass(frozen=True)
class RandomEffects:
    b: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "b", _as_readonly(self.b))
        if not np.all(np.isfinite(self.b)):
            raise DataError("random effects must be finite")


PRIAS_FIXED_BASIS = SplineBasis(degree=1, internal_knots=(0.1, 0.5, 4.0), boundary=(0.0, 7.0))
PRIAS_RANDOM_BASIS = SplineBasis(degree=1, internal_knots=(0.1,), boundary=(0.0, 7.0))


@dataclass(frozen=True)
class ModelSpec:
    """Structural choices of the joint model.

    Both spline blocks drop the leading basis function: the fixed and random
    intercepts absorb it, which keeps the design full rank and makes every
    spline column vanish at induction (t = 0).  With the default bases the
    fixed design has 3 + 4 columns and the random design q = 3.
    """

    fixed_basis: SplineBasis = PRIAS_FIXED_BASIS
    random_basis: SplineBasis = PRIAS_RANDOM_BASIS
    functional_form: FunctionalForm = FunctionalForm.VALUE_AND_SLOPE
    age_center: float = 70.0
    include_age_terms: bool = True

    def __post_init__(self):
        if not self.age_center > 0:
            raise DataError(f"age_center must be positive, got {self.age_center}")

    @property
    def n_fixed(self) -> int:
        return (3 if self.include_age_terms else 1) + (self.fixed_basis.dim - 1)

    @property
    def n_gamma(self) -> int:
        return 2 if self.include_age_terms else 0

    @property
    def q(self) -> int:
        return 1 + (self.random_basis.dim - 1)

    @property
    def horizon_boundary(self) -> float:
        """Splines are held constant beyond this time (see design ops)."""
        return self.fixed_basis.boundary[1]
