"""Exception hierarchy shared across the package.

The CLI maps these onto process exit codes: ConfigError -> 1,
DataError -> 2, NumericError -> 3.
"""


class RvhashError(Exception):
    """Base class for all package-specific errors."""


class ShapeError(RvhashError, ValueError):
    """Tensor/parameter dimensions do not fit together."""


class ConfigError(RvhashError, ValueError):
    """Bad configuration file, key, or value."""


class DataError(RvhashError, ValueError):
    """Malformed or inconsistent data/checkpoint/code file."""


class NumericError(RvhashError, ArithmeticError):
    """Numeric failure: NaN parameters or a failed gradient check."""
