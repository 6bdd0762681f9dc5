"""Shared exception types."""


class ShapeError(ValueError):
    """Operand shapes violate an operation's contract."""


class ConfigError(ValueError):
    """A configuration value is inconsistent or unsupported."""


class NumericError(FloatingPointError):
    """A computation produced or received non-finite values."""
