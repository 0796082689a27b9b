"""Exception types shared across the package."""


class SvdtrainError(Exception):
    """Base class for every error raised by this package."""


class ShapeError(SvdtrainError, ValueError):
    """Operand shapes or ranks are incompatible with the requested operation."""


class GeometryError(SvdtrainError, ValueError):
    """Convolution geometry does not yield positive integral output extents."""


class NumericError(SvdtrainError, ArithmeticError):
    """A numeric routine produced non-finite values or failed to converge."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class DataError(SvdtrainError, ValueError):
    """Base class for dataset loading problems."""


class DataFormatError(DataError):
    """A dataset file does not carry the expected magic/structure."""


class DataLengthError(DataError):
    """A dataset file is truncated or empty."""


class DataConsistencyError(DataError):
    """Dataset contents contradict each other (counts, label ranges)."""


class CheckpointError(SvdtrainError, ValueError):
    """Base class for checkpoint persistence problems."""


class CheckpointVersionError(CheckpointError):
    """Checkpoint was written with an unsupported format version."""


class CheckpointManifestError(CheckpointError):
    """Checkpoint manifest is missing, unparseable, or incomplete."""


class CheckpointBlobError(CheckpointError):
    """Checkpoint tensor blob does not match the manifest."""


class UsageError(SvdtrainError):
    """Command line arguments are invalid (CLI exit code 1)."""
