"""Exception hierarchy shared across the package."""


class SignetError(Exception):
    """Base class for all package errors."""


class ConfigError(SignetError):
    """Bad configuration: unknown keys, invalid values, missing files."""


class DataError(SignetError):
    """Dataset generation or ingestion failure."""


class FormatError(SignetError):
    """Malformed binary or text artifact (checkpoints, pair stores, IDX, CSV)."""


class DimensionError(SignetError):
    """Shape mismatch between tensors or network widths."""


class ContractError(SignetError):
    """An operation was called outside its contract (non-scalar backward, ...)."""


class RangeError(SignetError):
    """Argument outside its valid range (time outside [eps, T], bad index)."""


class DivergenceError(SignetError):
    """Non-finite values surfaced during training."""

    def __init__(self, message, step=None, report=None):
        super().__init__(message)
        self.step = step
        self.report = report


class PhaseError(SignetError):
    """A score source was evaluated while being updated."""


class DegenerateDensityError(SignetError):
    """Mixture with zero total variance has no finite score."""
