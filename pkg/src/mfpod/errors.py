"""Exception hierarchy.

Every error raised on purpose by the package derives from :class:`MfpodError`.
Errors that describe bad data or bad arguments also derive from ``ValueError``;
numerical breakdowns derive from :class:`NumericalError`. The CLI maps these
two families onto distinct exit codes.
"""


class MfpodError(Exception):
    """Base class for all package errors."""


class DataError(MfpodError, ValueError):
    """Input data or configuration is invalid."""


class NumericalError(MfpodError, ArithmeticError):
    """A numerical procedure failed (factorization, non-finite values, ...)."""


class InvalidDomainError(DataError):
    pass


class EmptyInputError(DataError):
    pass


class GridMismatchError(DataError):
    pass


class ShapeError(DataError):
    pass


class InvalidRankError(DataError):
    pass


class InvalidInputError(DataError):
    pass


class IllPosedDataError(DataError):
    pass


class NestedDesignError(DataError):
    pass


class SizeError(DataError):
    pass


class ConfigError(DataError):
    pass


class DesignDomainError(DataError):
    """A design vector lies outside the design space."""


class FileFormatError(DataError):
    pass


class ConditioningError(NumericalError):
    """Correlation matrix could not be factorized even after nugget escalation."""


class InvalidStartError(NumericalError):
    """Objective or constraints are non-finite at the starting point."""


class InfeasibleStartError(DataError):
    """No feasible starting point could be found for a multistart run."""
