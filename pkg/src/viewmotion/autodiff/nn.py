"""Layers built on the tape: modules, parameters, and seeded initialization.

Parameters are created zero-filled and given values by ``init_parameters``,
which derives an independent random stream per dotted parameter name. Two
models that share a name therefore share that parameter's initial values no
matter how the rest of either model differs, which the paired-comparison
experiments rely on.
"""

from __future__ import annotations

import math
import zlib
from typing import Iterator, Optional

import numpy as np

from . import ops
from .tensor import ShapeError, Tensor

__all__ = [
    "Parameter",
    "Module",
    "init_parameters",
    "Conv2d",
    "ConvTranspose2d",
    "BatchNorm2d",
    "Linear",
    "ConvLSTMCell",
]


class Parameter(Tensor):
    """A trainable tensor with an initialization recipe attached."""

    __slots__ = ("init",)

    def __init__(self, shape, init=("zeros",)):
        super().__init__(np.zeros(shape), requires_grad=True)
        self.init = init


def _he_std(fan_in: int, nonlinearity: str) -> float:
    if nonlinearity == "relu":
        return math.sqrt(2.0 / fan_in)
    if nonlinearity == "linear":
        return math.sqrt(1.0 / fan_in)
    raise ValueError(f"unknown nonlinearity {nonlinearity!r}")


class Module:
    """Minimal container: tracks parameters, buffers, children, and mode."""

    def __init__(self):
        object.__setattr__(self, "_params", {})
        object.__setattr__(self, "_buffers", {})
        object.__setattr__(self, "_children", {})
        object.__setattr__(self, "training", True)

    def __setattr__(self, key, value):
        if isinstance(value, Parameter):
            self._params[key] = value
        elif isinstance(value, Module):
            self._children[key] = value
        object.__setattr__(self, key, value)

    def register_buffer(self, key: str, value: np.ndarray) -> None:
        arr = np.asarray(value, dtype=np.float64)
        self._buffers[key] = arr
        object.__setattr__(self, key, arr)

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for key, p in self._params.items():
            yield (f"{prefix}.{key}" if prefix else key), p
        for key, child in self._children.items():
            yield from child.named_parameters(f"{prefix}.{key}" if prefix else key)

    def parameters(self) -> Iterator[Parameter]:
        for _, p in self.named_parameters():
            yield p

    def named_buffers(self, prefix: str = "") -> Iterator[tuple[str, np.ndarray]]:
        for key, b in self._buffers.items():
            yield (f"{prefix}.{key}" if prefix else key), b
        for key, child in self._children.items():
            yield from child.named_buffers(f"{prefix}.{key}" if prefix else key)

    def modules(self) -> Iterator["Module"]:
        yield self
        for child in self._children.values():
            yield from child.modules()

    def train(self, mode: bool = True) -> "Module":
        for m in self.modules():
            object.__setattr__(m, "training", mode)
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


def init_parameters(module: Module, seed: int) -> None:
    """Fill every parameter from a stream keyed by (seed, name).

    The per-name streams make the result independent of construction and
    iteration order, and let distinct models agree wherever their parameter
    names coincide.
    """
    for name, p in module.named_parameters():
        kind = p.init
        if kind[0] == "zeros":
            p.data[...] = 0.0
            continue
        if kind[0] == "ones":
            p.data[...] = 1.0
            continue
        key = zlib.crc32(name.encode("utf8"))
        rng = np.random.default_rng(np.random.SeedSequence([seed, key]))
        if kind[0] == "normal":
            p.data[...] = rng.normal(0.0, kind[1], p.shape)
        else:
            raise ValueError(f"unknown init {kind!r} for parameter {name}")


class Conv2d(Module):
    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        kernel: int,
        stride: int = 1,
        padding: int = 0,
        bias: bool = True,
        nonlinearity: str = "relu",
    ):
        super().__init__()
        self.stride = stride
        self.padding = padding
        std = _he_std(in_channels * kernel * kernel, nonlinearity)
        self.weight = Parameter(
            (out_channels, in_channels, kernel, kernel), ("normal", std)
        )
        self.bias = Parameter((out_channels,)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return ops.conv2d(x, self.weight, self.bias, self.stride, self.padding)


class ConvTranspose2d(Module):
    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        kernel: int,
        stride: int = 1,
        padding: int = 0,
        bias: bool = True,
        nonlinearity: str = "relu",
    ):
        super().__init__()
        self.stride = stride
        self.padding = padding
        std = _he_std(in_channels * kernel * kernel, nonlinearity)
        self.weight = Parameter(
            (in_channels, out_channels, kernel, kernel), ("normal", std)
        )
        self.bias = Parameter((out_channels,)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return ops.conv_transpose2d(x, self.weight, self.bias, self.stride, self.padding)


class BatchNorm2d(Module):
    """Batch normalization with in-place running statistics.

    Evaluating before any training batch (or an explicit
    ``init_running_stats``) raises, since the running buffers would be
    meaningless.
    """

    def __init__(self, channels: int, momentum: float = 0.1, eps: float = 1e-5):
        super().__init__()
        self.momentum = momentum
        self.eps = eps
        self.gamma = Parameter((channels,), ("ones",))
        self.beta = Parameter((channels,))
        self.register_buffer("running_mean", np.zeros(channels))
        self.register_buffer("running_var", np.ones(channels))
        # scalar buffer so checkpoints carry the initialized/uninitialized state
        self.register_buffer("batches_tracked", np.zeros(()))

    def init_running_stats(self) -> None:
        self.running_mean[...] = 0.0
        self.running_var[...] = 1.0
        self.batches_tracked[...] = 1.0

    def forward(self, x: Tensor) -> Tensor:
        if not self.training and self.batches_tracked == 0:
            raise RuntimeError(
                "batch_norm: running statistics were never set; train first or "
                "call init_running_stats()"
            )
        out = ops.batch_norm(
            x,
            self.gamma,
            self.beta,
            self.running_mean,
            self.running_var,
            self.training,
            self.momentum,
            self.eps,
        )
        if self.training:
            self.batches_tracked += 1.0
        return out


class Linear(Module):
    def __init__(
        self,
        in_features: int,
        out_features: int,
        bias: bool = True,
        nonlinearity: str = "relu",
    ):
        super().__init__()
        std = _he_std(in_features, nonlinearity)
        self.weight = Parameter((out_features, in_features), ("normal", std))
        self.bias = Parameter((out_features,)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return ops.linear(x, self.weight, self.bias)


class ConvLSTMCell(Module):
    """Convolutional LSTM step: one conv over [x, h] produces all four gates.

    Gate order along channels is input, forget, candidate, output. State
    update is the usual c' = f*c + i*g, h' = o*tanh(c'), everything
    convolutional so the spatial layout survives.
    """

    def __init__(self, in_channels: int, hidden_channels: int, kernel: int):
        super().__init__()
        if kernel % 2 != 1:
            raise ValueError(f"ConvLSTMCell kernel must be odd, got {kernel}")
        self.hidden_channels = hidden_channels
        self.gates = Conv2d(
            in_channels + hidden_channels,
            4 * hidden_channels,
            kernel,
            stride=1,
            padding=kernel // 2,
            nonlinearity="linear",
        )

    def init_state(self, batch: int, height: int, width: int) -> tuple[Tensor, Tensor]:
        k = self.hidden_channels
        return (
            Tensor(np.zeros((batch, k, height, width))),
            Tensor(np.zeros((batch, k, height, width))),
        )

    def forward(self, x: Tensor, h: Tensor, c: Tensor) -> tuple[Tensor, Tensor]:
        if x.shape[-2:] != h.shape[-2:]:
            raise ShapeError(
                f"ConvLSTMCell: input {x.shape} and state {h.shape} disagree"
            )
        k = self.hidden_channels
        z = self.gates(ops.concat_channels(x, h))
        i = ops.sigmoid(ops.channel_slice(z, 0, k))
        f = ops.sigmoid(ops.channel_slice(z, k, 2 * k))
        g = ops.tanh(ops.channel_slice(z, 2 * k, 3 * k))
        o = ops.sigmoid(ops.channel_slice(z, 3 * k, 4 * k))
        c_next = ops.add(ops.mul(f, c), ops.mul(i, g))
        h_next = ops.mul(o, ops.tanh(c_next))
        return h_next, c_next
