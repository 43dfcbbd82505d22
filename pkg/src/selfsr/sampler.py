"""Self-supervised training pairs built from a single image.

Fathers are rescaled copies of the input under the eight symmetries of the
square.  A father's son is the father shrunk by the SR factor and enlarged back
onto the father's grid, so every (son crop, father crop) pair shares one
canvas.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .resample import output_size, resample_bicubic

__all__ = [
    "DIHEDRAL",
    "Father",
    "SamplePair",
    "Sampler",
    "apply_dihedral",
    "invert_dihedral",
    "make_fathers",
    "make_son",
    "DEFAULT_FACTORS",
]

DEFAULT_FACTORS = (1.0, 0.9, 0.8, 0.7, 0.6)
# (quarter turns counter-clockwise, horizontal flip applied first)
DIHEDRAL = tuple((r, f) for f in (False, True) for r in range(4))


def apply_dihedral(img: np.ndarray, rot: int, flip: bool) -> np.ndarray:
    """Transform the last two axes."""
    out = img[..., ::-1] if flip else img
    return np.rot90(out, rot, axes=(-2, -1))


def invert_dihedral(img: np.ndarray, rot: int, flip: bool) -> np.ndarray:
    out = np.rot90(img, -rot, axes=(-2, -1))
    return out[..., ::-1] if flip else out


@dataclass
class Father:
    image: np.ndarray  # (H, W), values in [0, 1]
    factor: float
    rotation: int  # degrees
    flip: str  # "none" | "horizontal"

    @property
    def shape(self) -> tuple[int, int]:
        return self.image.shape


@dataclass
class SamplePair:
    x: np.ndarray  # LR-canvas crop (1, 1, c, c)
    y: np.ndarray  # HR crop (1, 1, c, c)
    father: int
    top: int
    left: int
    provenance: Father


def make_fathers(image: np.ndarray, factors=DEFAULT_FACTORS, crop: int = 64, multiple: int = 1) -> list[Father]:
    """Rescale by each factor, then take all eight dihedral variants.

    Results smaller than ``crop`` are dropped; each father is centre-cropped so
    both sides are multiples of ``multiple``.
    """
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 2:
        raise ValueError(f"expected a 2-d grayscale image, got shape {image.shape}")
    if min(image.shape) < crop:
        raise ValueError(f"image {image.shape[0]}x{image.shape[1]} is smaller than the {crop}px crop")
    fathers = []
    for d in factors:
        d = Fraction(d).limit_denominator(1000)
        if min(output_size(n, d) for n in image.shape) < crop:
            continue
        base = np.clip(resample_bicubic(image, d), 0.0, 1.0)
        base = _crop_to_multiple(base, multiple)
        if min(base.shape) < crop:
            continue
        for rot, flip in DIHEDRAL:
            img = np.ascontiguousarray(apply_dihedral(base, rot, flip))
            fathers.append(Father(img, float(d), 90 * rot, "horizontal" if flip else "none"))
    return fathers


def _crop_to_multiple(img: np.ndarray, m: int) -> np.ndarray:
    h, w = img.shape
    hh, ww = h - h % m, w - w % m
    top, left = (h - hh) // 2, (w - ww) // 2
    return img[top:top + hh, left:left + ww]


def make_son(father: np.ndarray, s: int) -> np.ndarray:
    """Shrink by ``s`` and enlarge back onto the father's grid."""
    father = _crop_to_multiple(np.asarray(father, dtype=np.float64), s)
    return resample_bicubic(resample_bicubic(father, Fraction(1, s)), s)


class Sampler:
    """Seeded stream of aligned (son, father) crops."""

    def __init__(self, fathers: list[Father], scale: int = 4, crop: int = 64, seed=0, dtype=np.float32):
        if not fathers:
            raise ValueError("no fathers to sample from")
        self.scale = scale
        self.crop = crop
        self.dtype = dtype
        self.rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        self.fathers = []
        self.sons = []
        for f in fathers:
            img = _crop_to_multiple(f.image, scale)
            if min(img.shape) < crop:
                continue
            self.fathers.append(Father(img, f.factor, f.rotation, f.flip))
            self.sons.append(make_son(img, scale))
        if not self.fathers:
            raise ValueError("every father is smaller than the crop")

    @classmethod
    def from_image(cls, image, scale=4, crop=64, factors=DEFAULT_FACTORS, seed=0, dtype=np.float32) -> "Sampler":
        return cls(make_fathers(image, factors, crop, multiple=scale), scale, crop, seed, dtype)

    def __len__(self) -> int:
        return len(self.fathers)

    def next_pair(self) -> SamplePair:
        i = int(self.rng.integers(len(self.fathers)))
        father = self.fathers[i]
        h, w = father.shape
        c = self.crop
        top = int(self.rng.integers(h - c + 1))
        left = int(self.rng.integers(w - c + 1))
        x = self.sons[i][top:top + c, left:left + c]
        y = father.image[top:top + c, left:left + c]
        return SamplePair(
            x=x[None, None].astype(self.dtype),
            y=y[None, None].astype(self.dtype),
            father=i,
            top=top,
            left=left,
            provenance=father,
        )
