"""Producing the final SR image from a trained generator."""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .config import RunConfig
from .resample import resample_bicubic
from .sampler import DIHEDRAL, apply_dihedral, invert_dihedral
from .tensor import ShapeError, Tensor, no_grad
from .trainer import FitResult, fit

__all__ = ["run_generator", "self_ensemble", "back_project", "super_resolve", "SRResult", "pad_to_multiple"]


def _model_dtype(G, default):
    params = getattr(G, "params", None)
    for _, t in params.items() if params is not None else ():
        return t.dtype
    return default


def run_generator(G, canvas: np.ndarray) -> np.ndarray:
    """G on a 2-d canvas at the model's precision, without recording a graph."""
    canvas = np.asarray(canvas)
    with no_grad():
        x = Tensor(np.ascontiguousarray(canvas, dtype=_model_dtype(G, canvas.dtype))[None, None])
        return G(x).data[0, 0].astype(np.float64)


def self_ensemble(G, canvas: np.ndarray, reduce=None) -> np.ndarray:
    """Per-pixel median of G over the eight symmetries of the canvas.

    ``reduce`` optionally post-processes each de-transformed member (used for
    per-member back-projection).
    """
    canvas = np.asarray(canvas, dtype=np.float64)
    m = getattr(G, "multiple", 8)
    if canvas.ndim != 2 or canvas.shape[0] % m or canvas.shape[1] % m:
        raise ShapeError(f"self_ensemble: canvas {canvas.shape} must be 2-d with sides divisible by {m}")
    members = []
    for rot, flip in DIHEDRAL:
        out = invert_dihedral(run_generator(G, apply_dihedral(canvas, rot, flip)), rot, flip)
        members.append(reduce(out) if reduce is not None else out)
    return np.median(np.stack(members), axis=0)


def back_project(sr: np.ndarray, lr_small: np.ndarray, iters: int = 10, s: int = 4) -> np.ndarray:
    """Iteratively push ``bicubic_down(sr)`` towards ``lr_small``; clamp once at the end."""
    sr = np.asarray(sr, dtype=np.float64)
    lr_small = np.asarray(lr_small, dtype=np.float64)
    if sr.shape[-2] != lr_small.shape[-2] * s or sr.shape[-1] != lr_small.shape[-1] * s:
        raise ShapeError(f"back_project: sr {sr.shape} is not {s}x lr {lr_small.shape}")
    if iters == 0:
        return sr.copy()
    down = Fraction(1, s)
    for _ in range(iters):
        sr = sr + resample_bicubic(lr_small - resample_bicubic(sr, down), s)
    return np.clip(sr, 0.0, 1.0)


def pad_to_multiple(img: np.ndarray, m: int) -> tuple[np.ndarray, tuple[int, int]]:
    h, w = img.shape
    ph, pw = (-h) % m, (-w) % m
    if ph or pw:
        img = np.pad(img, ((0, ph), (0, pw)), mode="reflect" if min(h, w) > max(ph, pw) else "edge")
    return img, (h, w)


@dataclass
class SRResult:
    image: np.ndarray
    fit: FitResult
    stats: dict = field(default_factory=dict)


def super_resolve(image: np.ndarray, config: RunConfig, progress=None) -> SRResult:
    """Train on ``image`` and return its x``config.scale`` reconstruction in [0, 1]."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 2:
        raise ValueError(f"expected a 2-d grayscale image, got shape {image.shape}")
    s = config.scale
    result = fit(image, config, progress=progress)
    t0 = time.perf_counter()
    G = result.models.G
    canvas, (h, w) = pad_to_multiple(resample_bicubic(image, s), G.multiple)

    def crop(a):
        return a[:h, :w]

    def bp(a):
        out = crop(a)
        if config.back_projection:
            out = back_project(out, image, config.bp_iters, s)
        return out

    if config.ensemble:
        if config.bp_each_member and config.back_projection:
            sr = self_ensemble(G, canvas, reduce=lambda a: np.pad(bp(a), ((0, a.shape[0] - h), (0, a.shape[1] - w))))
        else:
            sr = self_ensemble(G, canvas)
    else:
        sr = run_generator(G, canvas)
    sr = bp(sr)
    sr = np.clip(sr, 0.0, 1.0)
    stats = {
        "train_seconds": result.seconds,
        "inference_seconds": time.perf_counter() - t0,
        "steps": result.state.step,
        "final_lr": result.state.lr,
    }
    return SRResult(sr, result, stats)
