"""Exception types shared across the package."""


class WbaryError(Exception):
    """Base class for all package errors."""


class ValidationError(WbaryError):
    """Raised when inputs violate a documented precondition or file format."""


class NumericalError(WbaryError):
    """Raised when a solver fails numerically (overflow, degenerate state,
    pivot-limit exhaustion)."""
