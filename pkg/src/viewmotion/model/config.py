"""Architecture configuration shared by every network component."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

MODALITY_CHANNELS = {"depth": 1, "rgb": 3, "flow": 3}


@dataclass(frozen=True)
class ArchConfig:
    """Shapes and sizes of the encoder/decoder/classifier stack.

    The defaults are the desk-scale sizes; ``k=64`` with a 7x7 LSTM kernel
    reproduces the full-scale layout. The deconv stride plan is fixed at
    (2,1,2,1), so the flow output side must be 4x the encoding side.
    """

    modality: str = "depth"
    h: int = 7
    w: int = 7
    k: int = 16
    seq_len: int = 6
    num_views: int = 5
    num_actions: int = 8
    input_hw: int = 56
    flow_hw: int = 28
    classifier_hidden: int = 128
    backbone_channels: tuple = (8, 16, 16, 16)
    lstm_kernel: int = 3
    deconv_channels: tuple = (24, 16, 16)
    grl_lambda: float = 1.0

    def __post_init__(self):
        if self.modality not in MODALITY_CHANNELS:
            raise ValueError(
                f"modality must be one of {sorted(MODALITY_CHANNELS)}, "
                f"got {self.modality!r}"
            )
        if self.h != self.w:
            raise ValueError(f"encoding must be square, got {self.h}x{self.w}")
        if self.seq_len < 2:
            raise ValueError(f"sequence length must be >= 2, got {self.seq_len}")
        if self.num_views < 2:
            raise ValueError(f"need >= 2 views, got {self.num_views}")
        for name in ("h", "k", "num_actions", "input_hw", "flow_hw",
                     "classifier_hidden"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.flow_hw != 4 * self.h:
            raise ValueError(
                f"deconv stride plan maps h={self.h} to {4 * self.h}, "
                f"but flow_hw={self.flow_hw}"
            )
        if len(self.backbone_channels) != 4:
            raise ValueError("backbone_channels must list 4 stages")
        if len(self.deconv_channels) != 3:
            raise ValueError("deconv_channels must list 3 hidden widths")
        if self.lstm_kernel % 2 != 1:
            raise ValueError("lstm_kernel must be odd")
        if self._reduced_hw() != self.h:
            raise ValueError(
                f"input side {self.input_hw} does not reduce to h={self.h} "
                f"through the stride-2 stack (got {self._reduced_hw()})"
            )

    def _reduced_hw(self) -> int:
        side = self.input_hw
        for _ in range(3):
            side = (side + 2 - 3) // 2 + 1
        return side

    @property
    def in_channels(self) -> int:
        return MODALITY_CHANNELS[self.modality]

    @property
    def encoding_features(self) -> int:
        return 2 * self.k * self.h * self.w

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ArchConfig":
        data = dict(data)
        for key in ("backbone_channels", "deconv_channels"):
            if key in data:
                data[key] = tuple(data[key])
        return cls(**data)
