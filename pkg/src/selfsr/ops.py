"""Differentiable image operators: convolution, transposed convolution,
batch normalisation and bilinear resizing.

Images use the (batch, channel, height, width) layout.  Convolution is
cross-correlation with zero padding; the transposed convolution is its exact
adjoint and shares the same weight tensor layout, so
``conv2d_transpose(y, w)`` applies the transpose of ``x -> conv2d(x, w)``.
"""

from __future__ import annotations

from fractions import Fraction
from functools import lru_cache

import numpy as np

from .tensor import ShapeError, Tensor, as_tensor

__all__ = [
    "conv2d",
    "conv2d_transpose",
    "conv_output_size",
    "conv_transpose_output_size",
    "batch_norm",
    "resize_bilinear",
    "bilinear_matrix",
]


def conv_output_size(size: int, k: int, stride: int, pad: int) -> int:
    return (size + 2 * pad - k) // stride + 1


def conv_transpose_output_size(size: int, k: int, stride: int, pad: int, output_padding: int = 0) -> int:
    return (size - 1) * stride - 2 * pad + k + output_padding


def _im2col(xp: np.ndarray, k: int, stride: int, ho: int, wo: int) -> np.ndarray:
    b, c = xp.shape[:2]
    cols = np.empty((b, c, k, k, ho, wo), dtype=xp.dtype)
    hspan = stride * (ho - 1) + 1
    wspan = stride * (wo - 1) + 1
    for i in range(k):
        for j in range(k):
            cols[:, :, i, j] = xp[:, :, i:i + hspan:stride, j:j + wspan:stride]
    return cols.reshape(b, c * k * k, ho * wo)


def _col2im(cols: np.ndarray, shape: tuple[int, int, int, int], k: int, stride: int, ho: int, wo: int) -> np.ndarray:
    b, c = shape[:2]
    cols = cols.reshape(b, c, k, k, ho, wo)
    out = np.zeros(shape, dtype=cols.dtype)
    hspan = stride * (ho - 1) + 1
    wspan = stride * (wo - 1) + 1
    for i in range(k):
        for j in range(k):
            out[:, :, i:i + hspan:stride, j:j + wspan:stride] += cols[:, :, i, j]
    return out


def _pad(x: np.ndarray, pad: int) -> np.ndarray:
    if pad == 0:
        return x
    b, c, h, w = x.shape
    out = np.zeros((b, c, h + 2 * pad, w + 2 * pad), dtype=x.dtype)
    out[:, :, pad:pad + h, pad:pad + w] = x
    return out


def _check_common(x: Tensor, w: Tensor, stride: int, pad: int) -> None:
    if x.ndim != 4:
        raise ShapeError(f"expected BCHW input, got shape {x.shape}")
    if w.ndim != 4 or w.shape[2] != w.shape[3]:
        raise ShapeError(f"expected square 4-d kernel, got shape {w.shape}")
    if stride <= 0:
        raise ValueError(f"stride must be positive, got {stride}")
    if pad < 0:
        raise ValueError(f"padding must be non-negative, got {pad}")


def conv2d(x, weight, bias=None, stride: int = 1, pad: int = 0) -> Tensor:
    """Zero-padded cross-correlation.

    ``weight`` has shape (out, in, k, k) and ``bias`` shape (out,).
    """
    x, weight = as_tensor(x), as_tensor(weight)
    _check_common(x, weight, stride, pad)
    b, c, h, w_ = x.shape
    o, i, k, _ = weight.shape
    if c != i:
        raise ShapeError(f"conv2d: input has {c} channels, kernel expects {i}")
    if h + 2 * pad < k or w_ + 2 * pad < k:
        raise ShapeError(f"conv2d: kernel {k} does not fit padded input {h}x{w_} (pad {pad})")
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (o,):
            raise ShapeError(f"conv2d: bias shape {bias.shape} != ({o},)")
    ho, wo = conv_output_size(h, k, stride, pad), conv_output_size(w_, k, stride, pad)

    xp = _pad(x.data, pad)
    cols = _im2col(xp, k, stride, ho, wo)
    wmat = weight.data.reshape(o, i * k * k)
    out = np.matmul(wmat, cols).reshape(b, o, ho, wo)
    if bias is not None:
        out = out + bias.data[None, :, None, None]

    need_x, need_w = x.requires_grad, weight.requires_grad
    padded_shape = xp.shape

    def back(g):
        g2 = g.reshape(b, o, ho * wo)
        gx = gw = gb = None
        if need_w:
            gw = np.tensordot(g2, cols, axes=([0, 2], [0, 2])).reshape(weight.shape)
        if need_x:
            gp = _col2im(np.matmul(wmat.T, g2), padded_shape, k, stride, ho, wo)
            gx = gp[:, :, pad:pad + h, pad:pad + w_] if pad else gp
        if bias is not None and bias.requires_grad:
            gb = g.sum(axis=(0, 2, 3))
        return gx, gw, gb

    parents = (x, weight) if bias is None else (x, weight, bias)
    return Tensor._result(out, parents, back, "conv2d")


def conv2d_transpose(x, weight, bias=None, stride: int = 1, pad: int = 0, output_padding: int = 0) -> Tensor:
    """Adjoint of :func:`conv2d` for the same ``weight``, ``stride`` and ``pad``.

    ``weight`` has shape (in, out, k, k), i.e. the layout of the conv2d weight
    whose adjoint is taken.  ``output_padding`` adds rows/columns at the far
    edge so a stride-2 layer can exactly double an even-sized map.
    """
    x, weight = as_tensor(x), as_tensor(weight)
    _check_common(x, weight, stride, pad)
    if not 0 <= output_padding < stride:
        raise ValueError(f"output_padding must lie in [0, stride), got {output_padding}")
    b, c, h, w_ = x.shape
    i, o, k, _ = weight.shape
    if c != i:
        raise ShapeError(f"conv2d_transpose: input has {c} channels, kernel expects {i}")
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (o,):
            raise ShapeError(f"conv2d_transpose: bias shape {bias.shape} != ({o},)")
    ho = conv_transpose_output_size(h, k, stride, pad, output_padding)
    wo = conv_transpose_output_size(w_, k, stride, pad, output_padding)
    if ho < 1 or wo < 1:
        raise ShapeError("conv2d_transpose: degenerate output size")

    wmat = weight.data.reshape(i, o * k * k)
    x2 = x.data.reshape(b, i, h * w_)
    full_shape = (b, o, ho + 2 * pad, wo + 2 * pad)
    full = _col2im(np.matmul(wmat.T, x2), full_shape, k, stride, h, w_)
    out = full[:, :, pad:pad + ho, pad:pad + wo]
    out = out + bias.data[None, :, None, None] if bias is not None else np.ascontiguousarray(out)

    need_x, need_w = x.requires_grad, weight.requires_grad

    def back(g):
        cols = _im2col(_pad(g, pad), k, stride, h, w_)
        gx = gw = gb = None
        if need_x:
            gx = np.matmul(wmat, cols).reshape(x.shape)
        if need_w:
            gw = np.tensordot(x2, cols, axes=([0, 2], [0, 2])).reshape(weight.shape)
        if bias is not None and bias.requires_grad:
            gb = g.sum(axis=(0, 2, 3))
        return gx, gw, gb

    parents = (x, weight) if bias is None else (x, weight, bias)
    return Tensor._result(out, parents, back, "conv2d_transpose")


def batch_norm(
    x,
    gamma,
    beta,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    training: bool,
    momentum: float = 0.1,
    eps: float = 1e-5,
    update_stats: bool = True,
) -> Tensor:
    """Per-channel normalisation over (batch, height, width).

    In training mode the batch statistics are used and the running buffers are
    updated in place (unbiased variance); in eval mode the running buffers are
    used.  ``update_stats=False`` normalises with batch statistics but leaves
    the buffers alone.
    """
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    if x.ndim != 4:
        raise ShapeError(f"batch_norm expects BCHW input, got {x.shape}")
    b, c, h, w = x.shape
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(f"batch_norm: gamma/beta must have length {c}")
    n = b * h * w
    if n == 0:
        raise ShapeError("batch_norm on an empty batch")
    gam = gamma.data[None, :, None, None]

    if training:
        mu = x.data.mean(axis=(0, 2, 3))
        var = x.data.var(axis=(0, 2, 3))
        inv_std = 1.0 / np.sqrt(var + eps)
        xhat = (x.data - mu[None, :, None, None]) * inv_std[None, :, None, None]
        if update_stats:
            running_mean *= 1.0 - momentum
            running_mean += momentum * mu
            unbiased = var * (n / (n - 1)) if n > 1 else var
            running_var *= 1.0 - momentum
            running_var += momentum * unbiased

        def back(g):
            gxhat = g * gam
            s1 = gxhat.sum(axis=(0, 2, 3), keepdims=True)
            s2 = (gxhat * xhat).sum(axis=(0, 2, 3), keepdims=True)
            gx = (inv_std[None, :, None, None] / n) * (n * gxhat - s1 - xhat * s2)
            return gx, (g * xhat).sum(axis=(0, 2, 3)), g.sum(axis=(0, 2, 3))

    else:
        inv_std = 1.0 / np.sqrt(running_var + eps)
        xhat = (x.data - running_mean[None, :, None, None]) * inv_std[None, :, None, None]

        def back(g):
            gx = g * gam * inv_std[None, :, None, None]
            return gx, (g * xhat).sum(axis=(0, 2, 3)), g.sum(axis=(0, 2, 3))

    out = (xhat * gam + beta.data[None, :, None, None]).astype(x.dtype, copy=False)
    return Tensor._result(out, (x, gamma, beta), back, "batch_norm")


def _scaled_size(size: int, scale: Fraction) -> int:
    return int(size * scale)


@lru_cache(maxsize=256)
def bilinear_matrix(n_in: int, n_out: int, scale: Fraction) -> np.ndarray:
    """Row-stochastic (n_out, n_in) interpolation matrix, half-pixel centres."""
    m = np.zeros((n_out, n_in))
    inv = 1.0 / float(scale)
    for d in range(n_out):
        src = max((d + 0.5) * inv - 0.5, 0.0)
        i0 = min(int(np.floor(src)), n_in - 1)
        i1 = min(i0 + 1, n_in - 1)
        lam = src - i0
        m[d, i0] += 1.0 - lam
        m[d, i1] += lam
    m.setflags(write=False)
    return m


def resize_bilinear(x, scale) -> Tensor:
    """Differentiable bilinear resize of the last two axes by ``scale``."""
    x = as_tensor(x)
    scale = Fraction(scale).limit_denominator(10_000)
    if scale <= 0:
        raise ValueError("scale must be positive")
    h, w = x.shape[-2:]
    ho, wo = _scaled_size(h, scale), _scaled_size(w, scale)
    if ho < 1 or wo < 1:
        raise ShapeError("resize_bilinear: degenerate output size")
    ah = bilinear_matrix(h, ho, scale).astype(x.dtype)
    aw = bilinear_matrix(w, wo, scale).astype(x.dtype)
    out = np.matmul(np.matmul(ah, x.data), aw.T)
    return Tensor._result(out, (x,), lambda g: (np.matmul(np.matmul(ah.T, g), aw),), "resize_bilinear")
