"""Exception hierarchy shared by all pipeline stages.

The CLI maps these onto process exit codes, so every module raises one of
these rather than a bare ``ValueError``.
"""


class UebaError(Exception):
    """Base class for all package errors."""


class ConfigError(UebaError, ValueError):
    """A parameter or configuration value violates its documented bounds."""


class UsageError(UebaError, ValueError):
    """An operation was called with inputs that break its preconditions."""


class FormatError(UebaError, ValueError):
    """Input records do not look like the declared format."""


class DataError(UebaError, ValueError):
    """Input data contains values an operation cannot handle (e.g. NaN scores)."""


class GapError(UebaError, ValueError):
    """A day range required by a deviation window is not covered by the store."""


class TrainingDiverged(UebaError, RuntimeError):
    def __init__(self, epoch: int, loss: float):
        super().__init__(f"training diverged at epoch {epoch} (loss={loss})")
        self.epoch = epoch
        self.loss = loss


class StageError(UebaError, RuntimeError):
    """A pipeline stage is missing an upstream artifact."""
