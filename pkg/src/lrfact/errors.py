"""Exception hierarchy shared across the package."""


class LrfactError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(LrfactError):
    """Operand shapes do not compose."""


class RankError(LrfactError):
    """Requested rank is outside the valid range for the matrix."""


class SolverError(LrfactError):
    """A factorization solver failed; carries the offending layer name."""

    def __init__(self, message: str, layer_name: str | None = None):
        super().__init__(message)
        self.layer_name = layer_name


class ModelIOError(LrfactError):
    """Base class for model/tensor file errors."""


class VersionError(ModelIOError):
    """Manifest format_version is not supported."""


class TensorLayoutError(ModelIOError):
    """Manifest tensor entries overlap, run out of order, or leave the blob."""


class BlobLengthError(ModelIOError):
    """Binary blob length disagrees with the manifest."""


class NonFiniteError(ModelIOError):
    """A loaded tensor contains NaN or Inf."""


class ManifestError(ModelIOError):
    """Manifest is structurally invalid (missing keys, bad kinds, bad shapes)."""
