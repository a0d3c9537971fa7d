"""Joint-level full-body motion estimation from head and hand tracking signals."""

__version__ = "0.1.0"

from .model import JLMModel, ModelConfig
from .losses import LossWeights
from .runtime import TrainConfig, train, infer_stream, load_checkpoint, save_checkpoint

__all__ = [
    "JLMModel",
    "ModelConfig",
    "LossWeights",
    "TrainConfig",
    "train",
    "infer_stream",
    "load_checkpoint",
    "save_checkpoint",
]
