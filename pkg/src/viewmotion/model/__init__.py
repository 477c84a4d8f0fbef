"""Network components: encoder, decoders, classifiers, and the loss assembly."""

from .classifiers import ActionClassifier, ViewClassifier
from .config import MODALITY_CHANNELS, ArchConfig
from .decoders import CrossViewDecoder, DeconvStack, ReconstructionDecoder
from .encoder import ConvBackbone, EncoderState, SequenceEncoder
from .network import LossBundle, TrainingBatch, ViewMotionModel

__all__ = [
    "ArchConfig",
    "MODALITY_CHANNELS",
    "ConvBackbone",
    "SequenceEncoder",
    "EncoderState",
    "DeconvStack",
    "CrossViewDecoder",
    "ReconstructionDecoder",
    "ViewClassifier",
    "ActionClassifier",
    "ViewMotionModel",
    "TrainingBatch",
    "LossBundle",
]
