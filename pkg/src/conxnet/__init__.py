"""ConXNet chest X-ray classifier built on a small numpy/numba layer library."""
from ._accel import BACKEND
from .errors import CheckpointError, ConXNetError, DataError, NumericalError, ShapeError, StateError
from .model import ConXNet, ModelConfig, build, load, save, train

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "CheckpointError",
    "ConXNet",
    "ConXNetError",
    "DataError",
    "ModelConfig",
    "NumericalError",
    "ShapeError",
    "StateError",
    "build",
    "load",
    "save",
    "train",
]
