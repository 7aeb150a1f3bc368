"""Exception types shared across the package."""


class MMCEError(Exception):
    """Base class for every error raised by this package."""


class ConfigError(MMCEError, ValueError):
    """Shapes, arities or configuration values do not line up."""


class ValidationError(MMCEError, ValueError):
    """Input data violates a precondition (wrong group, empty set, ...)."""


class DomainError(MMCEError, ValueError):
    """An argument lies outside the domain of a function."""


class NumericError(MMCEError, ArithmeticError):
    """A non-finite value appeared where a finite one is required."""


class UsageError(MMCEError, RuntimeError):
    """An API was called out of order."""
