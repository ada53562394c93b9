"""Exception hierarchy shared across the package.

CLI exit codes map onto these: ConfigError -> 2, DivergenceError -> 3,
FormatError / OSError -> 4.
"""


class MetareconError(Exception):
    """Base class for all package errors."""


class DimensionError(MetareconError):
    """Operand shapes do not conform."""


class ContractError(MetareconError):
    """A call violated an operation's precondition."""


class DivergenceError(MetareconError):
    """A loss or gradient became non-finite during optimization."""

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class FormatError(MetareconError):
    """An on-disk artifact is malformed (bad magic, truncation, ...)."""


class ConfigError(MetareconError):
    """An experiment configuration is inconsistent or incomplete."""


class UndefinedMetricError(MetareconError):
    """A metric is undefined for the given inputs (e.g. empty surface)."""
