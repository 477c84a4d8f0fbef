"""Upsampling decoders: cross-view flow with a depth anchor, and reconstruction."""

from __future__ import annotations

from ..autodiff import BatchNorm2d, ConvTranspose2d, Module, Tensor, ops
from .config import ArchConfig
from .encoder import ConvBackbone


class DeconvStack(Module):
    """Four transposed convolutions mapping h x h features to 4h x 4h flow.

    Strides (2,1,2,1) with kernels (4,3,4,3) and padding 1; BN+ReLU between
    layers, none after the last since flow components are signed.
    """

    def __init__(self, in_channels: int, hidden: tuple, out_channels: int = 3):
        super().__init__()
        d1, d2, d3 = hidden
        self.up1 = ConvTranspose2d(in_channels, d1, 4, stride=2, padding=1)
        self.bn1 = BatchNorm2d(d1)
        self.up2 = ConvTranspose2d(d1, d2, 3, stride=1, padding=1)
        self.bn2 = BatchNorm2d(d2)
        self.up3 = ConvTranspose2d(d2, d3, 4, stride=2, padding=1)
        self.bn3 = BatchNorm2d(d3)
        self.up4 = ConvTranspose2d(d3, out_channels, 3, stride=1, padding=1,
                                   nonlinearity="linear")

    def forward(self, x: Tensor) -> Tensor:
        y = ops.relu(self.bn1(self.up1(x)))
        y = ops.relu(self.bn2(self.up2(y)))
        y = ops.relu(self.bn3(self.up3(y)))
        return self.up4(y)


class CrossViewDecoder(Module):
    """Predicts a target view's flow from a source encoding and that view's depth.

    The anchor depth passes through its own backbone to h x w x k, is
    concatenated with the 2k-channel encoding, and the joint 3k feature is
    upsampled. One parameter set serves every target view.
    """

    def __init__(self, cfg: ArchConfig):
        super().__init__()
        self.anchor_net = ConvBackbone(1, cfg.backbone_channels, cfg.k, cfg.h)
        self.deconv = DeconvStack(3 * cfg.k, cfg.deconv_channels)

    def anchor_features(self, anchor_depth: Tensor) -> Tensor:
        return self.anchor_net(anchor_depth)

    def forward(self, enc: Tensor, anchor_depth: Tensor) -> Tensor:
        return self.deconv(ops.concat_channels(enc, self.anchor_features(anchor_depth)))


class ReconstructionDecoder(Module):
    """Recovers the source view's own flow from its 2k-channel encoding."""

    def __init__(self, cfg: ArchConfig):
        super().__init__()
        self.deconv = DeconvStack(2 * cfg.k, cfg.deconv_channels)

    def forward(self, enc: Tensor) -> Tensor:
        return self.deconv(enc)
