"""
Error types shared by the numeric core, the services and the CLI
"""
from typing import Optional


class CkanSrError(Exception):
    """Base class for every error raised by this package"""


class ConfigurationError(CkanSrError, ValueError):
    """Invalid settings, unknown config keys, invalid spline grids"""


class ShapeError(CkanSrError, ValueError):
    """Operand shapes do not agree"""


class GeometryError(ShapeError):
    """Convolution geometry or image size cannot produce a valid output"""


class NonFiniteError(CkanSrError, FloatingPointError):
    """An operation produced NaN or Inf"""


class TrainingDivergedError(NonFiniteError):
    """A loss or a gradient became non-finite during training"""

    def __init__(self, message: str, group: Optional[str] = None):
        super().__init__(message)
        self.group = group


class ImageFormatError(CkanSrError, ValueError):
    """Image file could not be parsed or written"""


class DataError(CkanSrError):
    """Dataset manifest or evaluation set is unusable"""


class CheckpointError(CkanSrError, RuntimeError):
    """Checkpoint file is truncated or malformed"""


class CheckpointIncompatibleError(CheckpointError):
    """Checkpoint version or model configuration does not match"""
