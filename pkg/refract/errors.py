"""Exception hierarchy shared by the library and the CLI."""

from typing import Optional


class RefractError(Exception):
    """Base class for every error raised by refract."""


class ModelConfigError(RefractError):
    """A model or validation document could not be read or failed its schema."""

    def __init__(self, message: str, line: Optional[int] = None, column: Optional[int] = None):
        self.line = line
        self.column = column
        if line is not None:
            message = f"{message} (line {line}, column {column})"
        super().__init__(message)


class HypothesisError(ModelConfigError):
    """Hypothesis (H) fails: bounded variation driver with delta >= c0."""


class DomainError(RefractError, ValueError):
    """An operation was called outside its precondition."""


class RangeError(DomainError):
    """The numeric scale backend was asked for an abscissa it does not cover."""


class ConvergenceError(RefractError):
    """An iterative solver stopped before meeting its tolerance."""


class AccuracyError(RefractError):
    """Quadrature could not reach the requested tolerance."""

    def __init__(self, message: str, achieved: float):
        self.achieved = achieved
        super().__init__(f"{message} (achieved error bound {achieved:.3e})")


class UnsupportedBackendError(RefractError):
    """The requested evaluation has no implementation for this model class."""


class InternalConsistencyError(RefractError):
    """A quantity that is positive for every valid input came out non-positive."""
