"""Differentiable operations recorded onto the active tape.

Every op computes its forward result eagerly with numpy and, when a tape is
active and some input requires a gradient, registers a backward closure that
maps the upstream gradient to per-input gradients. Convolutions run through
an im2col/col2im pair; the independent nested-loop oracles live in the test
suite, not here.

Shape conventions: conv-family ops accept either (C,H,W) or batched
(N,C,H,W) inputs and return the same rank they were given. ``linear``
operates on (N,F). Elementwise binary ops require identical shapes —
there is no implicit broadcasting.
"""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import ShapeError, Tensor, _id_counter, active_tape

__all__ = [
    "add",
    "sub",
    "mul",
    "neg",
    "scale",
    "sum_all",
    "pointwise",
    "relu",
    "sigmoid",
    "tanh",
    "softmax",
    "conv2d",
    "conv_transpose2d",
    "linear",
    "batch_norm",
    "concat_channels",
    "channel_slice",
    "gather_rows",
    "stack_rows",
    "reshape",
    "mse_loss",
    "softmax_cross_entropy",
    "grad_reverse",
]


def _maybe_record(op, inputs, out_data, backward_fn) -> Tensor:
    out = Tensor(out_data)
    tape = active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        tape.record(op, inputs, out, backward_fn)
    return out


def _require_same_shape(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} differ")


# ---------------------------------------------------------------------------
# elementwise / reduction


def add(a: Tensor, b: Tensor) -> Tensor:
    _require_same_shape("add", a, b)
    return _maybe_record("add", (a, b), a.data + b.data, lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _require_same_shape("sub", a, b)
    return _maybe_record("sub", (a, b), a.data - b.data, lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _require_same_shape("mul", a, b)
    ad, bd = a.data, b.data
    na, nb = a.requires_grad, b.requires_grad

    def backward(g):
        return (g * bd if na else None, g * ad if nb else None)

    return _maybe_record("mul", (a, b), ad * bd, backward)


def neg(x: Tensor) -> Tensor:
    return _maybe_record("neg", (x,), -x.data, lambda g: (-g,))


def scale(x: Tensor, factor: float) -> Tensor:
    f = float(factor)
    return _maybe_record("scale", (x,), x.data * f, lambda g: (g * f,))


def sum_all(x: Tensor) -> Tensor:
    shape = x.shape
    return _maybe_record(
        "sum_all", (x,), np.asarray(x.data.sum()), lambda g: (np.broadcast_to(g, shape).copy(),)
    )


# ---------------------------------------------------------------------------
# pointwise nonlinearities


def pointwise(x: Tensor, kind: str) -> Tensor:
    """Elementwise relu / sigmoid / tanh with the matching backward rule."""
    xd = x.data
    if kind == "relu":
        y = np.maximum(xd, 0.0)
        mask = xd > 0.0
        return _maybe_record("relu", (x,), y, lambda g: (g * mask,))
    if kind == "sigmoid":
        # one overflow-free exponential, sign split via where
        e = np.exp(-np.abs(xd))
        y = np.where(xd >= 0, 1.0, e) / (1.0 + e)
        return _maybe_record("sigmoid", (x,), y, lambda g: (g * y * (1.0 - y),))
    if kind == "tanh":
        y = np.tanh(xd)
        return _maybe_record("tanh", (x,), y, lambda g: (g * (1.0 - y * y),))
    raise ValueError(f"unknown pointwise kind: {kind!r}")


def relu(x: Tensor) -> Tensor:
    return pointwise(x, "relu")


def sigmoid(x: Tensor) -> Tensor:
    return pointwise(x, "sigmoid")


def tanh(x: Tensor) -> Tensor:
    return pointwise(x, "tanh")


def softmax(x: Tensor) -> Tensor:
    """Row-wise softmax over the last axis."""
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        dot = (g * y).sum(axis=-1, keepdims=True)
        return ((g - dot) * y,)

    return _maybe_record("softmax", (x,), y, backward)


# ---------------------------------------------------------------------------
# im2col / col2im machinery shared by both convolution directions


def _as_batched(data: np.ndarray, op: str) -> tuple[np.ndarray, bool]:
    if data.ndim == 3:
        return data[None], True
    if data.ndim == 4:
        return data, False
    raise ShapeError(f"{op}: expected 3D or 4D input, got shape {data.shape}")


def _im2col(xp: np.ndarray, kh: int, kw: int, stride: int) -> np.ndarray:
    """(N,C,Hp,Wp) -> patch matrix (N*Ho*Wo, C*kh*kw) for the given stride."""
    n, c = xp.shape[:2]
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    ho, wo = win.shape[2], win.shape[3]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * kh * kw)
    return np.ascontiguousarray(cols)


def _col2im(
    cols: np.ndarray,
    n: int,
    c: int,
    hp: int,
    wp: int,
    kh: int,
    kw: int,
    stride: int,
    ho: int,
    wo: int,
) -> np.ndarray:
    """Scatter-add inverse of ``_im2col``; cols has shape (N*Ho*Wo, C*kh*kw)."""
    # one up-front transpose so the kh*kw scatter loop adds contiguous blocks
    patches = np.ascontiguousarray(
        cols.reshape(n, ho, wo, c, kh, kw).transpose(4, 5, 0, 3, 1, 2)
    )
    out = np.zeros((n, c, hp, wp), dtype=cols.dtype)
    for di in range(kh):
        i_stop = di + (ho - 1) * stride + 1
        for dj in range(kw):
            j_stop = dj + (wo - 1) * stride + 1
            out[:, :, di:i_stop:stride, dj:j_stop:stride] += patches[di, dj]
    return out


def _pad_spatial(x: np.ndarray, padding: int) -> np.ndarray:
    if padding == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))


def conv2d(
    x: Tensor,
    weight: Tensor,
    bias: Optional[Tensor] = None,
    stride: int = 1,
    padding: int = 0,
) -> Tensor:
    """Zero-padded 2D cross-correlation; weight is (C_out, C_in, kh, kw)."""
    if stride < 1:
        raise ValueError(f"conv2d: stride must be >= 1, got {stride}")
    if padding < 0:
        raise ValueError(f"conv2d: padding must be >= 0, got {padding}")
    xd, squeeze = _as_batched(x.data, "conv2d")
    if weight.ndim != 4:
        raise ShapeError(f"conv2d: weight must be 4D, got shape {weight.shape}")
    c_out, c_in, kh, kw = weight.shape
    n, cx, h, w = xd.shape
    if cx != c_in:
        raise ShapeError(
            f"conv2d: input channels of shape {xd.shape} do not match weight "
            f"shape {weight.shape}"
        )
    hp, wp = h + 2 * padding, w + 2 * padding
    if kh > hp or kw > wp:
        raise ShapeError(
            f"conv2d: kernel ({kh},{kw}) larger than padded input ({hp},{wp})"
        )
    ho = (hp - kh) // stride + 1
    wo = (wp - kw) // stride + 1

    cols = _im2col(_pad_spatial(xd, padding), kh, kw, stride)
    wmat = weight.data.reshape(c_out, c_in * kh * kw)
    out = cols @ wmat.T
    if bias is not None:
        out += bias.data
    out = out.reshape(n, ho, wo, c_out).transpose(0, 3, 1, 2)

    inputs = (x, weight) if bias is None else (x, weight, bias)
    need_x, need_w = x.requires_grad, weight.requires_grad

    def backward(g):
        g4 = g[None] if squeeze else g
        gmat = np.ascontiguousarray(g4.transpose(0, 2, 3, 1)).reshape(
            n * ho * wo, c_out
        )
        gw = (gmat.T @ cols).reshape(weight.shape) if need_w else None
        gx = None
        if need_x:
            gcols = gmat @ wmat
            gx = _col2im(gcols, n, c_in, hp, wp, kh, kw, stride, ho, wo)
            if padding:
                gx = gx[:, :, padding:-padding, padding:-padding]
            gx = gx[0] if squeeze else gx
        if bias is None:
            return gx, gw
        return gx, gw, gmat.sum(axis=0)

    return _maybe_record("conv2d", inputs, out[0] if squeeze else out, backward)


def conv_transpose2d(
    x: Tensor,
    weight: Tensor,
    bias: Optional[Tensor] = None,
    stride: int = 1,
    padding: int = 0,
) -> Tensor:
    """Fractionally-strided convolution; weight is (C_in, C_out, kh, kw).

    Output spatial size is (H-1)*stride - 2*padding + kh. Its input gradient
    is exactly a ``conv2d`` forward with the roles of the two directions
    swapped, which the oracle tests exploit.
    """
    if stride < 1:
        raise ValueError(f"conv_transpose2d: stride must be >= 1, got {stride}")
    if padding < 0:
        raise ValueError(f"conv_transpose2d: padding must be >= 0, got {padding}")
    xd, squeeze = _as_batched(x.data, "conv_transpose2d")
    if weight.ndim != 4:
        raise ShapeError(
            f"conv_transpose2d: weight must be 4D, got shape {weight.shape}"
        )
    c_in, c_out, kh, kw = weight.shape
    n, cx, h, w = xd.shape
    if cx != c_in:
        raise ShapeError(
            f"conv_transpose2d: input channels of shape {xd.shape} do not match "
            f"weight shape {weight.shape}"
        )
    ho = (h - 1) * stride - 2 * padding + kh
    wo = (w - 1) * stride - 2 * padding + kw
    if ho < 1 or wo < 1:
        raise ShapeError(
            f"conv_transpose2d: output ({ho},{wo}) collapsed for input "
            f"{xd.shape} with kernel ({kh},{kw}), stride {stride}, padding {padding}"
        )

    xmat = np.ascontiguousarray(xd.transpose(0, 2, 3, 1)).reshape(n * h * w, c_in)
    wmat = weight.data.reshape(c_in, c_out * kh * kw)
    cols = xmat @ wmat
    full = _col2im(cols, n, c_out, ho + 2 * padding, wo + 2 * padding, kh, kw, stride, h, w)
    out = full[:, :, padding : padding + ho, padding : padding + wo]
    if padding:
        out = np.ascontiguousarray(out)
    if bias is not None:
        out = out + bias.data[None, :, None, None]

    inputs = (x, weight) if bias is None else (x, weight, bias)
    need_x, need_w = x.requires_grad, weight.requires_grad

    def backward(g):
        g4 = g[None] if squeeze else g
        gx = gw = None
        if need_x or need_w:
            gcols = _im2col(_pad_spatial(g4, padding), kh, kw, stride)
            if need_x:
                gx = (gcols @ wmat.T).reshape(n, h, w, c_in).transpose(0, 3, 1, 2)
                gx = gx[0] if squeeze else gx
            if need_w:
                gw = (xmat.T @ gcols).reshape(weight.shape)
        if bias is None:
            return gx, gw
        return gx, gw, g4.sum(axis=(0, 2, 3))

    return _maybe_record(
        "conv_transpose2d", inputs, out[0] if squeeze else out, backward
    )


def linear(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """Affine map (N,F) @ (O,F)^T + (O,)."""
    if x.ndim != 2:
        raise ShapeError(f"linear: expected 2D input, got shape {x.shape}")
    if weight.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise ShapeError(
            f"linear: input shape {x.shape} incompatible with weight shape "
            f"{weight.shape}"
        )
    xd, wd = x.data, weight.data
    out = xd @ wd.T
    if bias is not None:
        out = out + bias.data

    inputs = (x, weight) if bias is None else (x, weight, bias)
    need_x, need_w = x.requires_grad, weight.requires_grad

    def backward(g):
        gx = g @ wd if need_x else None
        gw = g.T @ xd if need_w else None
        if bias is None:
            return gx, gw
        return gx, gw, g.sum(axis=0)

    return _maybe_record("linear", inputs, out, backward)


# ---------------------------------------------------------------------------
# batch normalization


def batch_norm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    training: bool,
    momentum: float = 0.1,
    eps: float = 1e-5,
) -> Tensor:
    """Per-channel normalization over (N,H,W) of a (N,C,H,W) input.

    In training mode the batch statistics normalize and the running buffers
    are updated in place (unbiased variance, torch-style momentum). In eval
    mode the running buffers normalize; keeping them valid is the caller's
    responsibility.
    """
    if x.ndim != 4:
        raise ShapeError(f"batch_norm: expected (N,C,H,W), got shape {x.shape}")
    xd = x.data
    n, c, h, w = xd.shape
    m = n * h * w
    if training and m < 2:
        raise ShapeError(
            f"batch_norm: training needs >= 2 values per channel, got {m}"
        )
    gam = gamma.data.reshape(1, c, 1, 1)
    bet = beta.data.reshape(1, c, 1, 1)

    if training:
        mean = np.einsum("nchw->c", xd) / m
        centered = xd - mean.reshape(1, c, 1, 1)
        var = np.einsum("nchw,nchw->c", centered, centered) / m
        inv_std = 1.0 / np.sqrt(var + eps)
        xhat = centered * inv_std.reshape(1, c, 1, 1)
        running_mean *= 1.0 - momentum
        running_mean += momentum * mean
        running_var *= 1.0 - momentum
        running_var += momentum * (var * (m / (m - 1)))
    else:
        inv_std = 1.0 / np.sqrt(running_var + eps)
        xhat = (xd - running_mean.reshape(1, c, 1, 1)) * inv_std.reshape(1, c, 1, 1)
    out = gam * xhat + bet

    need_x = x.requires_grad

    def backward(g):
        dbeta = np.einsum("nchw->c", g)
        dgamma = np.einsum("nchw,nchw->c", g, xhat)
        if not need_x:
            return None, dgamma, dbeta
        if training:
            # closed-form through the batch statistics
            coef = (gam.reshape(c) * inv_std).reshape(1, c, 1, 1)
            dx = (g - (dbeta / m).reshape(1, c, 1, 1)
                  - xhat * (dgamma / m).reshape(1, c, 1, 1)) * coef
        else:
            dx = g * (gam.reshape(c) * inv_std).reshape(1, c, 1, 1)
        return dx, dgamma, dbeta

    return _maybe_record("batch_norm", (x, gamma, beta), out, backward)


# ---------------------------------------------------------------------------
# structural ops


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    """Concatenate along the channel axis of (C,H,W) or (N,C,H,W) tensors."""
    if a.ndim != b.ndim or a.ndim not in (3, 4):
        raise ShapeError(
            f"concat_channels: incompatible ranks {a.shape} vs {b.shape}"
        )
    axis = a.ndim - 3
    if a.shape[axis] < 1 or b.shape[axis] < 1:
        raise ShapeError("concat_channels: empty channel block")
    if a.shape[:axis] != b.shape[:axis] or a.shape[axis + 1 :] != b.shape[axis + 1 :]:
        raise ShapeError(
            f"concat_channels: non-channel dims differ, {a.shape} vs {b.shape}"
        )
    ca = a.shape[axis]
    out = np.concatenate([a.data, b.data], axis=axis)
    na, nb = a.requires_grad, b.requires_grad
    head = (slice(None),) * axis

    def backward(g):
        ga = np.ascontiguousarray(g[head + (slice(None, ca),)]) if na else None
        gb = np.ascontiguousarray(g[head + (slice(ca, None),)]) if nb else None
        return ga, gb

    return _maybe_record("concat_channels", (a, b), out, backward)


def channel_slice(x: Tensor, start: int, stop: int) -> Tensor:
    """Contiguous channel range of a (C,H,W) or (N,C,H,W) tensor."""
    axis = x.ndim - 3
    if x.ndim not in (3, 4):
        raise ShapeError(f"channel_slice: expected 3D/4D input, got {x.shape}")
    if not (0 <= start < stop <= x.shape[axis]):
        raise ShapeError(
            f"channel_slice: range [{start},{stop}) invalid for shape {x.shape}"
        )
    idx = (slice(None),) * axis + (slice(start, stop),)
    out = np.ascontiguousarray(x.data[idx])
    xshape = x.shape

    def backward(g):
        gx = np.zeros(xshape, dtype=g.dtype)
        gx[idx] = g
        return (gx,)

    return _maybe_record("channel_slice", (x,), out, backward)


def gather_rows(x: Tensor, indices: Sequence[int]) -> Tensor:
    """Select rows along axis 0; repeated indices accumulate in backward."""
    idx = np.asarray(indices, dtype=np.intp)
    if idx.ndim != 1:
        raise ShapeError("gather_rows: indices must be one-dimensional")
    out = x.data[idx]
    xshape = x.shape

    def backward(g):
        gx = np.zeros(xshape, dtype=g.dtype)
        np.add.at(gx, idx, g)
        return (gx,)

    return _maybe_record("gather_rows", (x,), out, backward)


def stack_rows(tensors: Sequence[Tensor]) -> Tensor:
    """Stack same-shape tensors along a new leading axis."""
    if not tensors:
        raise ShapeError("stack_rows: need at least one tensor")
    shape = tensors[0].shape
    for t in tensors[1:]:
        if t.shape != shape:
            raise ShapeError(
                f"stack_rows: mismatched shapes {shape} vs {t.shape}"
            )
    out = np.stack([t.data for t in tensors], axis=0)
    needs = [t.requires_grad for t in tensors]

    def backward(g):
        return tuple(g[i] if needs[i] else None for i in range(len(tensors)))

    return _maybe_record("stack_rows", tuple(tensors), out, backward)


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    xshape = x.shape
    out = x.data.reshape(tuple(shape))
    return _maybe_record("reshape", (x,), out, lambda g: (g.reshape(xshape),))


# ---------------------------------------------------------------------------
# losses and the gradient reversal layer


def mse_loss(pred: Tensor, target: Tensor, reduction: str = "mean") -> Tensor:
    """Squared-error loss; ``mean`` divides by the element count, ``sum`` does not."""
    _require_same_shape("mse_loss", pred, target)
    if reduction not in ("mean", "sum"):
        raise ValueError(f"mse_loss: unknown reduction {reduction!r}")
    diff = pred.data - target.data
    value = np.asarray((diff * diff).sum())
    factor = 1.0
    if reduction == "mean":
        factor = 1.0 / diff.size
        value = value * factor
    need_p, need_t = pred.requires_grad, target.requires_grad

    def backward(g):
        gp = (2.0 * factor) * g * diff
        return (gp if need_p else None), (-gp if need_t else None)

    return _maybe_record("mse_loss", (pred, target), value, backward)


def softmax_cross_entropy(
    logits: Tensor, labels: Sequence[int], reduction: str = "sum"
) -> Tensor:
    """Row-wise cross entropy of (N,V) logits against integer labels.

    Numerically stable via max subtraction; the gradient is
    softmax(logits) - onehot(labels), scaled by the reduction factor.
    """
    if logits.ndim != 2:
        raise ShapeError(
            f"softmax_cross_entropy: expected (N,V) logits, got {logits.shape}"
        )
    if reduction not in ("mean", "sum"):
        raise ValueError(f"softmax_cross_entropy: unknown reduction {reduction!r}")
    lab = np.asarray(labels, dtype=np.intp)
    n, v = logits.shape
    if lab.shape != (n,):
        raise ShapeError(
            f"softmax_cross_entropy: labels shape {lab.shape} for logits {logits.shape}"
        )
    if lab.size and (lab.min() < 0 or lab.max() >= v):
        raise ValueError(
            f"softmax_cross_entropy: label out of range [0,{v}): "
            f"{lab[(lab < 0) | (lab >= v)][0]}"
        )
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1))
    rows = np.arange(n)
    losses = lse - z[rows, lab]
    factor = 1.0 / n if reduction == "mean" else 1.0
    value = np.asarray(losses.sum() * factor)

    def backward(g):
        soft = np.exp(z - lse[:, None])
        soft[rows, lab] -= 1.0
        return (g * factor * soft,)

    return _maybe_record("softmax_cross_entropy", (logits,), value, backward)


def grad_reverse(x: Tensor, lam: float = 1.0) -> Tensor:
    """Identity forward; multiplies the backward gradient by ``-lam``.

    The forward result shares the input's storage, so it is bitwise equal.
    """
    f = float(lam)
    out = Tensor.__new__(Tensor)
    out.data = x.data
    out.grad = None
    out.requires_grad = False
    out.tid = next(_id_counter)
    tape = active_tape()
    if tape is not None and x.requires_grad:
        out.requires_grad = True
        tape.record("grad_reverse", (x,), out, lambda g: ((-f) * g,))
    return out


# ---------------------------------------------------------------------------
# operator sugar on Tensor


def _tensor_add(self, other):
    return add(self, other)


def _tensor_sub(self, other):
    return sub(self, other)


def _tensor_mul(self, other):
    if isinstance(other, Tensor):
        return mul(self, other)
    return scale(self, other)


def _tensor_rmul(self, other):
    return scale(self, other)


def _tensor_neg(self):
    return neg(self)


Tensor.__add__ = _tensor_add
Tensor.__sub__ = _tensor_sub
Tensor.__mul__ = _tensor_mul
Tensor.__rmul__ = _tensor_rmul
Tensor.__neg__ = _tensor_neg
