"""
Error hierarchy for ExplainIL
"""
from typing import Optional


class ExplainILError(Exception):
    """Base class for every toolkit error"""


class ConfigError(ExplainILError, ValueError):
    """Run configuration could not be parsed or validated"""


# Network engine

class ArchitectureError(ExplainILError, ValueError):
    """Architecture descriptor is malformed or cannot be built"""


class ShapeMismatchError(ExplainILError, ValueError):
    """An array does not have the shape the operation expects"""

    def __init__(self, what: str, expected, actual):
        self.expected = expected
        self.actual = actual
        super().__init__(f"{what}: expected shape {expected}, got {actual}")


class LabelRangeError(ExplainILError, ValueError):
    """Class index outside [0, classes)"""


class ParameterLengthError(ExplainILError, ValueError):
    """Flat parameter vector has the wrong length"""

    def __init__(self, expected: int, actual: int):
        self.expected = expected
        self.actual = actual
        super().__init__(f"parameter vector length mismatch: expected {expected}, got {actual}")


class NonFiniteGradientError(ExplainILError, ArithmeticError):
    """Gradient contains NaN or infinity"""


class TrainingDivergedError(ExplainILError, ArithmeticError):
    """Loss became non-finite during training"""

    def __init__(self, epoch: int, batch: int, loss: float):
        self.epoch = epoch
        self.batch = batch
        self.loss = loss
        super().__init__(f"training diverged at epoch {epoch}, batch {batch} (loss={loss})")


class InvalidParameterError(ExplainILError, ValueError):
    """Scalar hyper-parameter outside its domain"""


class EmptyDatasetError(ExplainILError, ValueError):
    """Operation needs at least one sample"""


# Data

class SpeakerCountError(ExplainILError, ValueError):
    """Not enough distinct speakers for the requested partition"""


class FormatError(ExplainILError, ValueError):
    """Base class for on-disk format errors"""


class BadMagicError(FormatError):
    """File does not start with the expected magic bytes"""


class UnsupportedFormatError(FormatError):
    """File is well-formed but uses an unsupported encoding"""


class NonPcmError(UnsupportedFormatError):
    pass


class NonMonoError(UnsupportedFormatError):
    pass


class BitDepthError(UnsupportedFormatError):
    pass


class SampleRateError(UnsupportedFormatError):
    pass


class TruncatedPayloadError(FormatError):
    """Payload ends before the header says it should"""


class DimensionOverflowError(FormatError):
    """Header dimensions are zero or too large to be plausible"""


class VersionMismatchError(FormatError):
    """Checkpoint version is not supported"""


class ParamCountMismatchError(FormatError):
    """Stored parameter count disagrees with the architecture descriptor"""


# Explanations

class SegmentationError(ExplainILError, ValueError):
    """Segment request outside the valid range"""


class InsufficientSamplesError(ExplainILError, ValueError):
    """Too few perturbations to fit the surrogate"""


class ZeroVectorError(ExplainILError, ValueError):
    """Cosine quantity requested for a zero vector"""


class SingularSystemError(ExplainILError, ArithmeticError):
    """Normal equations are singular even after ridge regularization"""


# Sessions

class SessionError(ExplainILError):
    """A component failed inside an incremental session"""

    def __init__(self, session_id: int, cause: Exception, mode: Optional[str] = None):
        self.session_id = session_id
        self.cause = cause
        self.mode = mode
        where = f"session {session_id}" + (f" ({mode})" if mode else "")
        super().__init__(f"{where} failed: {type(cause).__name__}: {cause}")
