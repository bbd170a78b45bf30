"""Exception hierarchy.

The CLI maps these onto its exit codes: ``ConfigError`` -> 2, ``DataError`` -> 3,
``NumericError`` -> 4.
"""


class ArmaError(Exception):
    """Base class for all errors raised by armacast."""


class ContractError(ArmaError, ValueError):
    """An argument violates an operation's shape or ordering contract."""


class ConfigError(ArmaError, ValueError):
    """Invalid configuration (bad kernel size, unknown config key, ...)."""


class DataError(ArmaError):
    """Input data could not be loaded or is unusable."""


class NumericError(ArmaError, ArithmeticError):
    """A non-finite value was produced or consumed."""


class DivergenceError(NumericError):
    """Training produced a non-finite loss.

    ``last_good`` holds the best parameters seen before the divergence (or the
    initial parameters if no epoch completed).
    """

    def __init__(self, message, last_good=None, logs=None):
        super().__init__(message)
        self.last_good = last_good
        self.logs = logs or []


class CheckpointError(DataError):
    """A checkpoint file is truncated, corrupt or has an unknown layout."""


class VariantMismatchError(CheckpointError):
    """A checkpoint holds a different model variant than the caller expects."""


class UndefinedCorrelationError(ArmaError):
    """Pearson correlation requested for a constant sequence."""
