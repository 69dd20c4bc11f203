"""Audio-visual captioning with modality-balanced pretraining on a numpy autograd core."""
from .data import DEFAULT_DOWNSTREAM_SPEC, DEFAULT_PRETRAIN_SPEC, CaptionDataset, TaskSpec, generate, split
from .estimator import AudioVisualCaptioner
from .fusion import FusionKind
from .mbp import MbpState
from .model import CaptionerModel, ModelConfig

__version__ = "0.1.0"

__all__ = [
    "AudioVisualCaptioner",
    "CaptionDataset",
    "CaptionerModel",
    "DEFAULT_DOWNSTREAM_SPEC",
    "DEFAULT_PRETRAIN_SPEC",
    "FusionKind",
    "MbpState",
    "ModelConfig",
    "TaskSpec",
    "generate",
    "split",
]
