"""Trainable facial action unit detector with region attention and
dense pairwise refinement, on a small numpy autodiff core."""

from .config import Augmentation, RunConfig
from .errors import (ManifestError, OracleSizeError, ShapeError, StateError,
                     TrainingDiverged)
from .kernels import BACKEND
from .model import AuDetector, ForwardResult
from .tensor import Tensor, no_grad, parameter, tensor

__version__ = "0.1.0"

__all__ = [
    "Augmentation", "RunConfig", "AuDetector", "ForwardResult",
    "Tensor", "tensor", "parameter", "no_grad", "BACKEND",
    "ShapeError", "StateError", "ManifestError", "OracleSizeError",
    "TrainingDiverged", "__version__",
]
