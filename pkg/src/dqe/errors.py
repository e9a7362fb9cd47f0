"""Exception hierarchy shared by all modules.

The CLI maps these onto exit codes: data/format problems exit with 2,
numerical-invariant failures with 3.
"""


class DQEError(Exception):
    """Base class for package errors."""


class DataError(DQEError):
    """Bad input data (dataset contents, degenerate statistics, empty splits)."""


class FormatError(DataError):
    """A container file could not be parsed."""


class BadMagicError(FormatError):
    pass


class UnsupportedVersionError(FormatError):
    pass


class TruncatedFileError(FormatError):
    pass


class ShapeMismatchError(FormatError):
    pass


class NumericalError(DQEError):
    """A numerical invariant was violated or a solver failed."""


class InvariantError(NumericalError):
    """Trace drift, lost Hermiticity or similar during a simulation."""

    def __init__(self, message: str, time: float | None = None):
        super().__init__(message if time is None else f"{message} (t = {time:.6g})")
        self.time = time


class EigensolverError(NumericalError):
    pass


class TrainingDivergedError(NumericalError):
    def __init__(self, epoch: int, loss: float):
        super().__init__(f"training diverged at epoch {epoch} (loss = {loss!r})")
        self.epoch = epoch
        self.loss = loss


class ResourceError(DQEError):
    """Requested problem size exceeds the configured cap."""
