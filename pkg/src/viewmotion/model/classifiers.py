"""View-adversarial and action classifier heads over the encodings."""

from __future__ import annotations

from ..autodiff import Linear, Module, ShapeError, Tensor, ops
from .config import ArchConfig
from .encoder import EncoderState


class ViewClassifier(Module):
    """Two fully connected layers predicting the source view of an encoding."""

    def __init__(self, cfg: ArchConfig):
        super().__init__()
        self.fc1 = Linear(cfg.encoding_features, cfg.classifier_hidden)
        self.fc2 = Linear(cfg.classifier_hidden, cfg.num_views, nonlinearity="linear")

    def forward(self, enc: Tensor) -> Tensor:
        if enc.ndim == 4:
            enc = ops.reshape(enc, (enc.shape[0], -1))
        if enc.ndim != 2:
            raise ShapeError(f"expected flat or (N,C,h,w) encodings, got {enc.shape}")
        return self.fc2(ops.relu(self.fc1(enc)))

    def probabilities(self, enc: Tensor) -> Tensor:
        return ops.softmax(self.forward(enc))


class ActionClassifier(Module):
    """One fully connected layer per timestep; sequence score is the mean."""

    def __init__(self, cfg: ArchConfig):
        super().__init__()
        self.fc = Linear(cfg.encoding_features, cfg.num_actions, nonlinearity="linear")

    def forward(self, state: EncoderState) -> Tensor:
        total = None
        for enc in state.encodings:
            score = self.fc(ops.reshape(enc, (enc.shape[0], -1)))
            total = score if total is None else ops.add(total, score)
        return ops.scale(total, 1.0 / len(state.encodings))
