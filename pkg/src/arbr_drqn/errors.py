"""Exception hierarchy. Each class carries the CLI exit code it maps to."""


class ArbrDrqnError(Exception):
    exit_code = 1


class ConfigError(ArbrDrqnError):
    exit_code = 1


class DataError(ArbrDrqnError):
    exit_code = 2


class SchemaError(DataError):
    """Missing or duplicate CSV column."""


class OrderingError(DataError):
    """Timestamps not strictly increasing."""


class ValidationError(DataError):
    """A row violates a bar invariant (negative price, high < low, ...)."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class InsufficientHistoryError(DataError):
    pass


class DegenerateError(DataError):
    """Zero variance, zero denominator, constant column."""


class DimensionError(ArbrDrqnError):
    exit_code = 1


class NumericError(ArbrDrqnError):
    exit_code = 3


class LookaheadError(ArbrDrqnError):
    exit_code = 3


class DomainError(DataError):
    """Input outside a function's mathematical domain (log of a non-positive price, ...)."""


class InsufficientDataError(ArbrDrqnError):
    """Not enough items to satisfy a request (e.g. sampling an underfilled buffer)."""


class ContractError(ArbrDrqnError):
    """A caller broke a documented precondition (e.g. non-symmetric matrix)."""
