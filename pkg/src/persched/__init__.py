"""Personalized biopsy scheduling for active surveillance.

Joint model of longitudinal log2 PSA and time to Gleason reclassification,
patient-specific predictive distributions of the reclassification time,
loss-function-derived biopsy policies, and a simulation harness to compare
schedules.
"""

__version__ = "0.1.0"

from .errors import (
    ArtifactError,
    DataError,
    DomainError,
    InfeasibleError,
    NumericError,
    PerschedError,
    TailDominatedError,
    UndefinedRateError,
)
from .splines import SplineBasis, bspline_basis, bspline_basis_derivative
from .types import (
    BiopsyRecord,
    CensoringInterval,
    FunctionalForm,
    ModelSpec,
    PSplineLogHazard,
    PatientHistory,
    PsaMeasurement,
    RandomEffects,
    Theta,
    WeibullHazard,
)
