"""Non-differentiable bicubic resampling (Catmull-Rom, a = -0.5).

Separable and edge-clamped.  When shrinking, the kernel is stretched by the
reduction factor (antialiasing, as in the classic ``imresize``), and the taps
of every output sample are renormalised to sum to one.
"""

from __future__ import annotations

import math
from fractions import Fraction
from functools import lru_cache

import numpy as np

from .tensor import ShapeError, Tensor

__all__ = ["cubic_kernel", "bicubic_matrix", "resample_bicubic", "output_size"]

A = -0.5


def cubic_kernel(t: np.ndarray) -> np.ndarray:
    t = np.abs(t)
    t2, t3 = t * t, t * t * t
    near = (A + 2) * t3 - (A + 3) * t2 + 1
    far = A * t3 - 5 * A * t2 + 8 * A * t - 4 * A
    return np.where(t <= 1, near, np.where(t < 2, far, 0.0))


def output_size(size: int, scale: Fraction) -> int:
    # exact products (e.g. 64 * 1/4) stay exact; others round to nearest
    return int(math.floor(size * scale + Fraction(1, 2)))


@lru_cache(maxsize=512)
def bicubic_matrix(n_in: int, n_out: int, scale: Fraction) -> np.ndarray:
    """(n_out, n_in) resampling matrix for one axis."""
    s = float(scale)
    stretch = min(s, 1.0)
    support = 2.0 / stretch
    m = np.zeros((n_out, n_in))
    for d in range(n_out):
        centre = (d + 0.5) / s - 0.5
        lo = int(math.floor(centre - support)) + 1
        taps = np.arange(lo, int(math.ceil(centre + support)))
        w = cubic_kernel((centre - taps) * stretch)
        w = w / w.sum()
        np.add.at(m[d], np.clip(taps, 0, n_in - 1), w)
    m.setflags(write=False)
    return m


def resample_bicubic(image, scale):
    """Resample the last two axes of ``image`` by ``scale``.

    Accepts an ndarray or a :class:`Tensor` and returns the same kind (a
    Tensor result carries no gradient).
    """
    as_t = isinstance(image, Tensor)
    arr = image.data if as_t else np.asarray(image)
    if arr.dtype.kind != "f":
        arr = arr.astype(np.float64)
    scale = Fraction(scale).limit_denominator(10_000)
    if scale <= 0:
        raise ValueError("scale must be positive")
    h, w = arr.shape[-2:]
    ho, wo = output_size(h, scale), output_size(w, scale)
    if ho < 1 or wo < 1:
        raise ShapeError(f"resample_bicubic: {h}x{w} at scale {scale} is degenerate")
    if scale == 1:
        out = arr.copy()
    else:
        mh = bicubic_matrix(h, ho, scale).astype(arr.dtype)
        mw = bicubic_matrix(w, wo, scale).astype(arr.dtype)
        out = np.matmul(np.matmul(mh, arr), mw.T)
    return Tensor(out) if as_t else out
