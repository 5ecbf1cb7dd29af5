"""Exception hierarchy shared by every module."""


class MimbfdError(Exception):
    """Base class for all package errors."""


class ConfigError(MimbfdError, ValueError):
    """Invalid configuration or unsatisfiable request (CLI exit code 1)."""


class GraphFormatError(MimbfdError, ValueError):
    """Malformed graph files."""


class GraphLoadError(MimbfdError, FileNotFoundError):
    """A required graph file is missing."""


class NumericError(MimbfdError, ArithmeticError):
    """Non-convergence, NaN or other numeric failure (CLI exit code 2)."""


class ShapeError(MimbfdError, ValueError):
    """Operand shapes are incompatible."""


class StateError(MimbfdError, RuntimeError):
    """Operation invalid in the current object state."""


class MetricError(MimbfdError, ValueError):
    """A metric is undefined for the given inputs."""
