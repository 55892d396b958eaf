class LdlError(Exception):
    """Base class for errors raised by this package."""


class DataError(LdlError, ValueError):
    """Malformed or invalid input data."""


class ConfigError(LdlError, ValueError):
    """Training configuration violates its invariants."""


class NumericalError(LdlError, ArithmeticError):
    """A computation produced non-finite values or failed to converge."""
