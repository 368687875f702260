"""Exception types shared across the package."""


class EcgFcnError(Exception):
    """Base class for all package-specific errors."""


class DatasetFormatError(EcgFcnError):
    """Raised when an on-disk dataset is missing, inconsistent or corrupt."""


class CheckpointError(EcgFcnError):
    """Raised when a model checkpoint cannot be read or fails validation."""


class DivergenceError(EcgFcnError):
    """Training produced a non-finite loss.

    Carries the (0-based) epoch index at which the divergence occurred.
    """

    def __init__(self, epoch: int, message: str | None = None):
        self.epoch = epoch
        super().__init__(message or f"non-finite loss at epoch {epoch}")


class DimensionalityError(EcgFcnError):
    """Two saliency maps (or a map and an input) have incompatible shapes."""
