"""Exception types shared across the package."""


class SmoothDivError(Exception):
    """Base class for package errors."""


class ConfigError(SmoothDivError, ValueError):
    """Invalid user input: a malformed spec, config file or parameter."""


class NumericalError(SmoothDivError, ArithmeticError):
    """A computation produced a result that cannot be trusted."""
