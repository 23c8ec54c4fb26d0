"""Exception hierarchy shared across the package."""


class PerschedError(Exception):
    """Base class for all package errors."""


class DomainError(PerschedError, ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class DataError(PerschedError, ValueError):
    """Invalid or inconsistent input data (parsing, invariants, dimensions)."""


class NumericError(PerschedError, ArithmeticError):
    """A numerical routine failed (quadrature breakdown, non-finite target, ...)."""


class UndefinedRateError(NumericError):
    """A classification rate is undefined (empty case/control/predicted set).

    Rates that could still be computed are attached so callers can report
    partial information.
    """

    def __init__(self, message, tpr=None, fpr=None, ppv=None):
        super().__init__(message)
        self.tpr = tpr
        self.fpr = fpr
        self.ppv = ppv


class TailDominatedError(NumericError):
    """A predictive summary is dominated by mass beyond the integration horizon."""

    def __init__(self, message, estimate=None, tail_prob=None):
        super().__init__(message)
        self.estimate = estimate
        self.tail_prob = tail_prob


class ArtifactError(PerschedError, ValueError):
    """A model artifact cannot be decoded (corrupt payload, version mismatch)."""


class InfeasibleError(PerschedError, ValueError):
    """No candidate satisfies the requested constraints."""
