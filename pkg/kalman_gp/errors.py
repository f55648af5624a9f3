"""
Exception hierarchy for Kalman GP.

Input errors are precondition violations raised before any computation happens;
numerical errors are raised when a factorization, a stability check or an
optimizer gives up.
"""

from typing import Any, Optional


class KalmanGPError(Exception):
    """Base exception for all Kalman GP errors."""

    pass


class InputError(KalmanGPError, ValueError):
    """Exception raised when an operation is called with invalid arguments."""

    pass


class DuplicateLocationError(InputError):
    """Exception raised when a location set would contain the same point twice."""

    pass


class TimeOrderError(InputError):
    """Exception raised when time stamps go backwards."""

    pass


class UndefinedFitError(InputError):
    """Exception raised when the fit metric is asked for a zero reference."""

    pass


class NumericalError(KalmanGPError):
    """Base exception for numerical failures."""

    pass


class ConditioningError(NumericalError):
    """Exception raised when a matrix that must be positive definite is not."""

    pass


class InstabilityError(NumericalError):
    """Exception raised for unstable dynamics or non-Hurwitz denominators."""

    pass


class UnsupportedExactFactorization(NumericalError):
    """Exception raised for temporal kernels without an exact rational spectrum."""

    pass


class ApproximationError(NumericalError):
    """Exception raised when a rational spectral fit cannot be produced."""

    def __init__(self, message: str, diagnostics: Optional[dict[str, Any]] = None) -> None:
        self.message = message
        self.diagnostics = diagnostics or {}
        super().__init__(message)
