"""Exception types that map onto CLI exit codes."""


class ConfigError(ValueError):
    """Bad configuration or arguments (exit 2)."""


class DataError(ValueError):
    """Missing, malformed or out-of-support input data (exit 3)."""


class NumericalError(ArithmeticError):
    """Non-finite quantities during fitting or estimation (exit 4)."""
