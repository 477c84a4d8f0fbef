"""Independent reference implementations used to check the fast paths.

Everything here is deliberately written the slow, obvious way: nested
loops, explicit scatter, scalar recurrences, central differences. None of
it shares code with the package under test.
"""

from __future__ import annotations

import numpy as np


def conv2d_loops(x, w, b=None, stride=1, padding=0):
    """Quadruple-nested-loop cross-correlation; x is (C_in,H,W) or (N,C_in,H,W)."""
    squeeze = x.ndim == 3
    if squeeze:
        x = x[None]
    n, c_in, h, wd = x.shape
    c_out, _, kh, kw = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (wd + 2 * padding - kw) // stride + 1
    out = np.zeros((n, c_out, ho, wo))
    for bi in range(n):
        for co in range(c_out):
            for i in range(ho):
                for j in range(wo):
                    acc = 0.0
                    for ci in range(c_in):
                        for u in range(kh):
                            for v in range(kw):
                                acc += (
                                    xp[bi, ci, i * stride + u, j * stride + v]
                                    * w[co, ci, u, v]
                                )
                    out[bi, co, i, j] = acc + (0.0 if b is None else b[co])
    return out[0] if squeeze else out


def conv_transpose2d_loops(x, w, b=None, stride=1, padding=0):
    """Scatter-accumulate transposed convolution; w is (C_in,C_out,kh,kw)."""
    squeeze = x.ndim == 3
    if squeeze:
        x = x[None]
    n, c_in, h, wd = x.shape
    _, c_out, kh, kw = w.shape
    ho = (h - 1) * stride - 2 * padding + kh
    wo = (wd - 1) * stride - 2 * padding + kw
    full = np.zeros((n, c_out, ho + 2 * padding, wo + 2 * padding))
    for bi in range(n):
        for ci in range(c_in):
            for i in range(h):
                for j in range(wd):
                    val = x[bi, ci, i, j]
                    for co in range(c_out):
                        for u in range(kh):
                            for v in range(kw):
                                full[bi, co, i * stride + u, j * stride + v] += (
                                    val * w[ci, co, u, v]
                                )
    out = full[:, :, padding : padding + ho, padding : padding + wo]
    if b is not None:
        out = out + b[None, :, None, None]
    return out[0] if squeeze else out


def linear_loops(x, w, b=None):
    """Double-loop affine map; x is (N,F), w is (O,F)."""
    n, f = x.shape
    o = w.shape[0]
    out = np.zeros((n, o))
    for i in range(n):
        for j in range(o):
            acc = 0.0
            for k in range(f):
                acc += x[i, k] * w[j, k]
            out[i, j] = acc + (0.0 if b is None else b[j])
    return out


def patch_mean_loops(field, patch):
    """Nested-loop non-overlapping patch mean of an (H,W,C) field."""
    h, w, c = field.shape
    out = np.zeros((h // patch, w // patch, c))
    for i in range(h // patch):
        for j in range(w // patch):
            for ch in range(c):
                acc = 0.0
                for u in range(patch):
                    for v in range(patch):
                        acc += field[i * patch + u, j * patch + v, ch]
                out[i, j, ch] = acc / (patch * patch)
    return out


def adam_scalar_steps(theta, grads, lr, beta1=0.9, beta2=0.999, eps=1e-8, wd=0.0):
    """Hand-rolled scalar Adam with decoupled decay; returns theta after each step."""
    m = 0.0
    v = 0.0
    out = []
    for t, g in enumerate(grads, start=1):
        m = beta1 * m + (1 - beta1) * g
        v = beta2 * v + (1 - beta2) * g * g
        m_hat = m / (1 - beta1**t)
        v_hat = v / (1 - beta2**t)
        theta = theta - lr * (m_hat / (v_hat**0.5 + eps) + wd * theta)
        out.append(theta)
    return out


def fd_grad(value_fn, x, eps=1e-6):
    """Central finite differences of a scalar function against array x in place."""
    grad = np.zeros_like(x)
    flat = x.ravel()
    gflat = grad.ravel()
    for i in range(flat.size):
        keep = flat[i]
        flat[i] = keep + eps
        hi = value_fn()
        flat[i] = keep - eps
        lo = value_fn()
        flat[i] = keep
        gflat[i] = (hi - lo) / (2 * eps)
    return grad


def rel_error(a, b):
    """Max elementwise |a-b| / max(1, |a|, |b|); the gradcheck metric."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = np.maximum(1.0, np.maximum(np.abs(a), np.abs(b)))
    return float(np.max(np.abs(a - b) / denom)) if a.size else 0.0
