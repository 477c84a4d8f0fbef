"""Frame backbone and the bidirectional convolutional LSTM encoder."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..autodiff import BatchNorm2d, Conv2d, ConvLSTMCell, Module, ShapeError, Tensor, ops
from .config import ArchConfig


@dataclass
class EncoderState:
    """Per-timestep encodings, each (B, 2k, h, w)."""

    encodings: list

    def __len__(self) -> int:
        return len(self.encodings)


class ConvBackbone(Module):
    """Strided conv stack reducing a frame to a k-channel h x w feature map.

    Three stride-2 stages halve the input side three times, a stride-1 stage
    refines, and a bare 1x1 convolution reduces to k channels.
    """

    def __init__(self, in_channels: int, channels: tuple, k: int, out_hw: int):
        super().__init__()
        c1, c2, c3, c4 = channels
        self.conv1 = Conv2d(in_channels, c1, 3, stride=2, padding=1)
        self.bn1 = BatchNorm2d(c1)
        self.conv2 = Conv2d(c1, c2, 3, stride=2, padding=1)
        self.bn2 = BatchNorm2d(c2)
        self.conv3 = Conv2d(c2, c3, 3, stride=2, padding=1)
        self.bn3 = BatchNorm2d(c3)
        self.conv4 = Conv2d(c3, c4, 3, stride=1, padding=1)
        self.bn4 = BatchNorm2d(c4)
        self.reduce = Conv2d(c4, k, 1, nonlinearity="linear")
        self.out_hw = out_hw

    def forward(self, x: Tensor) -> Tensor:
        y = ops.relu(self.bn1(self.conv1(x)))
        y = ops.relu(self.bn2(self.conv2(y)))
        y = ops.relu(self.bn3(self.conv3(y)))
        y = ops.relu(self.bn4(self.conv4(y)))
        y = self.reduce(y)
        if y.shape[-2:] != (self.out_hw, self.out_hw):
            raise ShapeError(
                f"backbone produced {y.shape[-2:]} from input {x.shape}, "
                f"expected {(self.out_hw, self.out_hw)}"
            )
        return y


class SequenceEncoder(Module):
    """Backbone per frame, then forward and backward ConvLSTM passes.

    The two directional hidden maps at each timestep are concatenated
    channel-wise (forward first), giving 2k channels.
    """

    def __init__(self, cfg: ArchConfig):
        super().__init__()
        self.cfg = cfg
        self.backbone = ConvBackbone(cfg.in_channels, cfg.backbone_channels, cfg.k, cfg.h)
        self.fwd_cell = ConvLSTMCell(cfg.k, cfg.k, cfg.lstm_kernel)
        self.bwd_cell = ConvLSTMCell(cfg.k, cfg.k, cfg.lstm_kernel)

    def forward(self, frames) -> EncoderState:
        if not isinstance(frames, Tensor):
            frames = Tensor(np.asarray(frames))
        if frames.ndim != 5:
            raise ShapeError(
                f"expected (B,T,C,H,W) frame block, got shape {frames.shape}"
            )
        b, t = frames.shape[:2]
        if t != self.cfg.seq_len:
            raise ShapeError(
                f"sequence length {t} does not match configured {self.cfg.seq_len}"
            )
        fold = ops.reshape(frames, (b * t,) + frames.shape[2:])
        feats = self.backbone(fold)
        # row b*T + t of the fold belongs to (sample b, time t)
        per_t = [
            ops.gather_rows(feats, np.arange(b) * t + step) for step in range(t)
        ]

        h, c = self.fwd_cell.init_state(b, self.cfg.h, self.cfg.w)
        forward_maps = []
        for step in range(t):
            h, c = self.fwd_cell(per_t[step], h, c)
            forward_maps.append(h)

        h, c = self.bwd_cell.init_state(b, self.cfg.h, self.cfg.w)
        backward_maps = [None] * t
        for step in reversed(range(t)):
            h, c = self.bwd_cell(per_t[step], h, c)
            backward_maps[step] = h

        return EncoderState(
            [
                ops.concat_channels(forward_maps[step], backward_maps[step])
                for step in range(t)
            ]
        )
