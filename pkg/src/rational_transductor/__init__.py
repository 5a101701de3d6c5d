"""Rational Transductor: WFA rational-feature heads injected into a small transformer."""

__version__ = "0.1.0"

from .errors import (ConfigError, ConvergenceError, InputError, NumericError, RationalError, ResourceError,
                     ShapeError, SingularMatrixError)

__all__ = [
    "__version__",
    "ConfigError",
    "ConvergenceError",
    "InputError",
    "NumericError",
    "RationalError",
    "ResourceError",
    "ShapeError",
    "SingularMatrixError",
]
