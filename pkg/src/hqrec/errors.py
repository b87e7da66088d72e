"""Exception hierarchy shared across the package."""


class HqrecError(Exception):
    """Base class for all package errors."""


class ShapeError(HqrecError, ValueError):
    """Operand shapes are incompatible for the requested operation."""


class GraphError(HqrecError, RuntimeError):
    """Invalid use of a computation graph (non-scalar loss, reuse, detachment)."""


class NumericError(HqrecError, ArithmeticError):
    """Non-finite values detected, or numerically invalid input."""


class DataError(HqrecError, ValueError):
    """Malformed records, schema violations, or infeasible dataset requests."""


class ConfigError(HqrecError, ValueError):
    """Invalid or inconsistent configuration."""


class CheckpointError(HqrecError, RuntimeError):
    """Corrupt, truncated, or incompatible checkpoint file."""
