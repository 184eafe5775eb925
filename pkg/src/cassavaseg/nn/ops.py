"""Differentiable operations needed by the UNet, all on NCHW float32 tensors."""

from __future__ import annotations

import numpy as np

from ..errors import InsufficientBatch, ShapeError
from .tensor import Tensor

BN_EPS = 1e-5
BN_MOMENTUM = 0.1


def _need(t: Tensor | None) -> bool:
    return t is not None and t.requires_grad


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, padding: int = 1) -> Tensor:
    """Stride-1 cross-correlation: im2col into a (C*k*k, N*H*W) matrix, then one matmul."""
    if x.data.ndim != 4 or weight.data.ndim != 4:
        raise ShapeError(f"conv2d expects 4-D input and weight, got {x.shape} and {weight.shape}")
    n, c, h, w = x.shape
    f, wc, k, k2 = weight.shape
    if wc != c:
        raise ShapeError(f"conv2d: input has {c} channels, weight expects {wc}")
    if k != k2 or k % 2 == 0:
        raise ShapeError(f"conv2d: kernel must be square and odd, got {k}x{k2}")
    if bias is not None and bias.shape != (f,):
        raise ShapeError(f"conv2d: bias shape {bias.shape} != ({f},)")
    p = padding
    ho, wo = h + 2 * p - k + 1, w + 2 * p - k + 1
    if ho < 1 or wo < 1:
        raise ShapeError("conv2d: kernel larger than padded input")

    # channel-major im2col: rows are (c, ki, kj), columns are (n, y, x)
    xp = x.data.transpose(1, 0, 2, 3)
    if p:
        xp = np.pad(xp, ((0, 0), (0, 0), (p, p), (p, p)))
    cols = np.empty((c, k, k, n, ho, wo), dtype=np.float32)
    for i in range(k):
        for j in range(k):
            cols[:, i, j] = xp[:, :, i:i + ho, j:j + wo]
    cols = cols.reshape(c * k * k, n * ho * wo)
    wmat = weight.data.reshape(f, c * k * k)
    out = wmat @ cols
    if bias is not None:
        out += bias.data[:, None]
    out = out.reshape(f, n, ho, wo).transpose(1, 0, 2, 3)

    def backward(g):
        gm = np.ascontiguousarray(g.transpose(1, 0, 2, 3)).reshape(f, n * ho * wo)
        dx = dw = db = None
        if weight.requires_grad:
            dw = (gm @ cols.T).reshape(weight.shape)
        if _need(bias):
            db = gm.sum(axis=1)
        if x.requires_grad:
            dcols = (wmat.T @ gm).reshape(c, k, k, n, ho, wo)
            dxp = np.zeros((c, n, h + 2 * p, w + 2 * p), dtype=np.float32)
            for i in range(k):
                for j in range(k):
                    dxp[:, :, i:i + ho, j:j + wo] += dcols[:, i, j]
            dx = (dxp[:, :, p:p + h, p:p + w] if p else dxp).transpose(1, 0, 2, 3)
        return dx, dw, db

    parents = (x, weight) if bias is None else (x, weight, bias)
    return Tensor.from_op(out, parents, backward)


def batchnorm2d(x: Tensor, gamma: Tensor, beta: Tensor, running_mean: np.ndarray, running_var: np.ndarray,
                training: bool, momentum: float = BN_MOMENTUM, eps: float = BN_EPS) -> Tensor:
    """Per-channel batch normalization.

    In training mode the running statistics are updated in place
    (``running = (1 - momentum) * running + momentum * batch``, unbiased batch
    variance); evaluation mode normalizes with the running statistics.
    """
    if x.data.ndim != 4:
        raise ShapeError(f"batchnorm2d expects NCHW input, got {x.shape}")
    n, c, h, w = x.shape
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(f"batchnorm2d: gamma/beta must have shape ({c},)")
    m = n * h * w
    if training:
        if m < 2:
            raise InsufficientBatch(f"batchnorm2d needs N*H*W >= 2 in training mode, got {m}")
        mean = x.data.mean(axis=(0, 2, 3), dtype=np.float64)
        var = x.data.var(axis=(0, 2, 3), dtype=np.float64)
        running_mean *= 1 - momentum
        running_mean += momentum * mean
        running_var *= 1 - momentum
        running_var += momentum * var * m / (m - 1)
    else:
        mean = running_mean.astype(np.float64)
        var = running_var.astype(np.float64)

    invstd = (1.0 / np.sqrt(var + eps)).astype(np.float32)
    mean32 = mean.astype(np.float32)
    xhat = (x.data - mean32[:, None, None]) * invstd[:, None, None]
    out = xhat * gamma.data[:, None, None] + beta.data[:, None, None]

    def backward(g):
        dgamma = (g * xhat).sum(axis=(0, 2, 3)) if gamma.requires_grad else None
        dbeta = g.sum(axis=(0, 2, 3)) if beta.requires_grad else None
        dx = None
        if x.requires_grad:
            dxhat = g * gamma.data[:, None, None]
            if training:
                s1 = dxhat.sum(axis=(0, 2, 3), dtype=np.float64).astype(np.float32)
                s2 = (dxhat * xhat).sum(axis=(0, 2, 3), dtype=np.float64).astype(np.float32)
                dx = (dxhat - s1[:, None, None] / m - xhat * (s2[:, None, None] / m)) * invstd[:, None, None]
            else:
                dx = dxhat * invstd[:, None, None]
        return dx, dgamma, dbeta

    return Tensor.from_op(out, (x, gamma, beta), backward)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    out = np.maximum(x.data, np.float32(0))

    def backward(g):
        return (g * mask,)

    return Tensor.from_op(out, (x,), backward)


def maxpool2d(x: Tensor, size: int = 2) -> Tensor:
    """Non-overlapping max pooling; gradient goes to the first maximum in scan order."""
    n, c, h, w = x.shape
    if h % size or w % size:
        raise ShapeError(f"maxpool2d needs spatial dims divisible by {size}, got {h}x{w}")
    ho, wo = h // size, w // size
    windows = (x.data.reshape(n, c, ho, size, wo, size)
               .transpose(0, 1, 2, 4, 3, 5)
               .reshape(n, c, ho, wo, size * size))
    arg = windows.argmax(axis=-1)
    out = np.take_along_axis(windows, arg[..., None], axis=-1)[..., 0]

    def backward(g):
        dwin = np.zeros((n, c, ho, wo, size * size), dtype=np.float32)
        np.put_along_axis(dwin, arg[..., None], g[..., None], axis=-1)
        dx = (dwin.reshape(n, c, ho, wo, size, size)
              .transpose(0, 1, 2, 4, 3, 5)
              .reshape(n, c, h, w))
        return (dx,)

    return Tensor.from_op(out, (x,), backward)


def upconv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """2x2 transposed convolution with stride 2; weight is (C_in, C_out, 2, 2)."""
    n, c, h, w = x.shape
    if weight.data.ndim != 4 or weight.shape[0] != c or weight.shape[2:] != (2, 2):
        raise ShapeError(f"upconv2d: weight {weight.shape} incompatible with input {x.shape}")
    f = weight.shape[1]
    xm = x.data.transpose(0, 2, 3, 1).reshape(n * h * w, c)
    wm = weight.data.reshape(c, f * 4)
    out = (xm @ wm).reshape(n, h, w, f, 2, 2).transpose(0, 3, 1, 4, 2, 5).reshape(n, f, 2 * h, 2 * w)
    if bias is not None:
        out = out + bias.data[:, None, None]

    def backward(g):
        gm = g.reshape(n, f, h, 2, w, 2).transpose(0, 2, 4, 1, 3, 5).reshape(n * h * w, f * 4)
        dx = dw = db = None
        if weight.requires_grad:
            dw = (xm.T @ gm).reshape(weight.shape)
        if x.requires_grad:
            dx = (gm @ wm.T).reshape(n, h, w, c).transpose(0, 3, 1, 2)
        if _need(bias):
            db = g.sum(axis=(0, 2, 3))
        return dx, dw, db

    parents = (x, weight) if bias is None else (x, weight, bias)
    return Tensor.from_op(out, parents, backward)


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 4 or b.data.ndim != 4 or a.shape[0] != b.shape[0] or a.shape[2:] != b.shape[2:]:
        raise ShapeError(f"concat_channels: incompatible shapes {a.shape} and {b.shape}")
    ca = a.shape[1]
    out = np.concatenate([a.data, b.data], axis=1)

    def backward(g):
        return g[:, :ca], g[:, ca:]

    return Tensor.from_op(out, (a, b), backward)


def softmax_channels(x: Tensor) -> Tensor:
    """Softmax over axis 1 independently at every pixel."""
    shifted = x.data - x.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=1, keepdims=True)

    def backward(g):
        return (s * (g - (g * s).sum(axis=1, keepdims=True)),)

    return Tensor.from_op(s, (x,), backward)
