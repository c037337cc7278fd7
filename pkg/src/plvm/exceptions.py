"""Exception types shared across the package."""


class PlvmError(Exception):
    """Base class for all package errors."""


class DomainError(PlvmError, ValueError):
    """An argument is outside the mathematical domain of an operation."""


class ParseError(PlvmError, ValueError):
    """An input file violates its schema; the message names the offending cell."""


class BoundsError(PlvmError, ValueError):
    """An index or size argument is out of range."""


class ConfigError(PlvmError, ValueError):
    """A run configuration is inconsistent or incomplete."""


class NumericalError(PlvmError, RuntimeError):
    """An iterative procedure produced non-finite values or failed to proceed."""
