"""Exception hierarchy shared by every module."""


class RationalError(Exception):
    """Base class for all library errors."""


class ShapeError(RationalError, ValueError):
    pass


class InputError(RationalError, ValueError):
    pass


class SingularMatrixError(RationalError, ArithmeticError):
    pass


class ConvergenceError(RationalError, ArithmeticError):
    pass


class NumericError(RationalError, ArithmeticError):
    """Non-finite or overflowing values encountered."""


class ResourceError(RationalError, MemoryError):
    pass


class ConfigError(RationalError, ValueError):
    """Invalid configuration; the message carries the offending field path."""

    def __init__(self, path: str, message: str):
        self.path = path
        super().__init__(f"{path}: {message}")
