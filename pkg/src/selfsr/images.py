"""Grayscale image codecs: binary PGM (P5) and PNG."""

from __future__ import annotations

import re
from pathlib import Path

import numpy as np

from .metrics import to_luminance

__all__ = ["load_image", "save_image", "ImageFormatError", "blob_image"]


class ImageFormatError(ValueError):
    pass


_PGM_HEADER = re.compile(rb"P5\s+(?:#[^\n]*\n\s*)*(\d+)\s+(?:#[^\n]*\n\s*)*(\d+)\s+(?:#[^\n]*\n\s*)*(\d+)\s")


def _read_pgm(buf: bytes, path) -> np.ndarray:
    m = _PGM_HEADER.match(buf)
    if not m:
        raise ImageFormatError(f"{path}: malformed PGM header")
    w, h, maxval = (int(g) for g in m.groups())
    if w == 0 or h == 0:
        raise ImageFormatError(f"{path}: zero image dimension")
    if not 0 < maxval < 65536:
        raise ImageFormatError(f"{path}: bad PGM maxval {maxval}")
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    need = w * h * dtype.itemsize
    body = buf[m.end():m.end() + need]
    if len(body) < need:
        raise ImageFormatError(f"{path}: truncated PGM data")
    return np.frombuffer(body, dtype=dtype).reshape(h, w).astype(np.float64) / maxval


def _read_png(path) -> np.ndarray:
    from PIL import Image

    try:
        with Image.open(path) as im:
            im.load()
            mode = im.mode
            if mode in ("I;16", "I;16B", "I;16L", "I"):
                arr = np.asarray(im, dtype=np.float64)
                maxval = 65535.0
                return arr / maxval
            if mode in ("1", "L", "P", "LA"):
                return np.asarray(im.convert("L"), dtype=np.float64) / 255.0
            if mode in ("RGB", "RGBA"):
                return to_luminance(np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0)
            raise ImageFormatError(f"{path}: unsupported PNG mode {mode}")
    except ImageFormatError:
        raise
    except Exception as exc:  # Pillow raises a zoo of exception types
        raise ImageFormatError(f"{path}: cannot decode PNG ({exc})") from exc


def load_image(path) -> np.ndarray:
    """Read a grayscale image as a float64 (H, W) array in [0, 1]."""
    path = Path(path)
    buf = path.read_bytes()
    if buf[:2] == b"P5":
        img = _read_pgm(buf, path)
    elif buf[:8] == b"\x89PNG\r\n\x1a\n":
        img = _read_png(path)
    else:
        raise ImageFormatError(f"{path}: unsupported format (need PNG or binary PGM)")
    if img.size == 0:
        raise ImageFormatError(f"{path}: zero image dimension")
    return img


def save_image(img: np.ndarray, path, bits: int = 8) -> None:
    """Quantise to ``bits`` (8 or 16) and write PNG or PGM by file suffix."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 2:
        raise ValueError(f"expected a 2-d image, got shape {img.shape}")
    if bits not in (8, 16):
        raise ValueError("bits must be 8 or 16")
    maxval = 255 if bits == 8 else 65535
    q = np.rint(np.clip(img, 0.0, 1.0) * maxval)
    path = Path(path)
    if path.suffix.lower() == ".pgm":
        dtype = "u1" if bits == 8 else ">u2"
        header = f"P5\n{img.shape[1]} {img.shape[0]}\n{maxval}\n".encode()
        path.write_bytes(header + q.astype(dtype).tobytes())
        return
    from PIL import Image

    if bits == 8:
        Image.fromarray(q.astype(np.uint8)).save(path, format="PNG")
    else:
        Image.fromarray(q.astype(np.uint16)).save(path, format="PNG")


def blob_image(size: int = 128, seed: int = 0, blobs: int = 14) -> np.ndarray:
    """Seeded synthetic test image: Gaussian blobs plus straight step edges."""
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    img = np.zeros((size, size))
    for _ in range(blobs):
        cy, cx = rng.uniform(0, size, 2)
        sig = rng.uniform(0.03, 0.12) * size
        amp = rng.uniform(-0.5, 1.0)
        img += amp * np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * sig * sig))
    for _ in range(3):
        theta = rng.uniform(0, np.pi)
        off = rng.uniform(-0.3, 0.3) * size
        side = (xx - size / 2) * np.cos(theta) + (yy - size / 2) * np.sin(theta) > off
        img += rng.uniform(0.15, 0.35) * side
    img -= img.min()
    return 0.05 + 0.9 * img / img.max()
