"""Parameters, initialisation, Adam and the binary checkpoint format."""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np

from . import ops
from .tensor import Tensor

__all__ = [
    "LayerSpec",
    "Param",
    "ParamStore",
    "init_params",
    "adam_step",
    "save_checkpoint",
    "load_checkpoint",
    "CheckpointError",
    "checkpoint_size",
    "conv",
    "deconv",
    "bn",
]

MAGIC = b"SSR1"
FORMAT_VERSION = 1
_MAX_NDIM = 8


class CheckpointError(ValueError):
    pass


@dataclass
class Param:
    tensor: Tensor
    trainable: bool = True
    m: np.ndarray | None = None
    v: np.ndarray | None = None
    step: int = 0


class ParamStore:
    """Insertion-ordered map from hierarchical name to parameter."""

    def __init__(self):
        self._params: dict[str, Param] = {}

    def add(self, name: str, value: np.ndarray, trainable: bool = True) -> Tensor:
        if name in self._params:
            raise KeyError(f"duplicate parameter name {name!r}")
        t = Tensor(np.array(value), requires_grad=trainable)
        self._params[name] = Param(t, trainable)
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name].tensor

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def __iter__(self) -> Iterator[str]:
        return iter(self._params)

    def names(self) -> list[str]:
        return list(self._params)

    def param(self, name: str) -> Param:
        return self._params[name]

    def items(self):
        return ((k, p.tensor) for k, p in self._params.items())

    def entries(self):
        return self._params.items()

    def zero_grad(self) -> None:
        for p in self._params.values():
            p.tensor.grad = None

    def set_trainable(self, flag: bool) -> None:
        """Toggle gradient recording for every trainable entry."""
        for p in self._params.values():
            if p.trainable:
                p.tensor.requires_grad = flag

    def checksum(self) -> str:
        h = hashlib.sha256()
        for name, p in self._params.items():
            h.update(name.encode())
            h.update(np.ascontiguousarray(p.tensor.data).tobytes())
        return h.hexdigest()

    def prefixed(self, prefix: str) -> "ParamStore":
        """A view-free copy whose names carry ``prefix + '.'``; tensors are shared."""
        out = ParamStore()
        for name, p in self._params.items():
            out._params[f"{prefix}.{name}"] = p
        return out

    def subset(self, prefix: str) -> "ParamStore":
        out = ParamStore()
        cut = len(prefix) + 1
        for name, p in self._params.items():
            if name.startswith(prefix + "."):
                out._params[name[cut:]] = p
        return out

    @staticmethod
    def merge(*stores: "ParamStore") -> "ParamStore":
        out = ParamStore()
        for s in stores:
            for name, p in s._params.items():
                if name in out._params:
                    raise KeyError(f"duplicate parameter name {name!r}")
                out._params[name] = p
        return out

    def astype(self, dtype) -> None:
        for p in self._params.values():
            p.tensor.data = p.tensor.data.astype(dtype)


@dataclass(frozen=True)
class LayerSpec:
    """One layer of a network description.

    kind: ``conv`` (weight out,in,k,k), ``deconv`` (weight in,out,k,k) or
    ``bn`` (gamma/beta plus running buffers over ``cout`` channels).
    """

    name: str
    kind: str
    cin: int
    cout: int
    k: int = 3
    stride: int = 1
    trainable: bool = True


def init_params(layers: list[LayerSpec], seed: int, dtype=np.float32) -> ParamStore:
    """He-normal conv/deconv weights, zero biases, unit BN scale."""
    rng = np.random.default_rng(seed)
    store = ParamStore()
    for spec in layers:
        if spec.kind in ("conv", "deconv"):
            fan_in = spec.cin * spec.k * spec.k
            shape = (spec.cout, spec.cin, spec.k, spec.k) if spec.kind == "conv" else (spec.cin, spec.cout, spec.k, spec.k)
            w = rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)
            store.add(f"{spec.name}.weight", w.astype(dtype), spec.trainable)
            store.add(f"{spec.name}.bias", np.zeros(spec.cout, dtype=dtype), spec.trainable)
        elif spec.kind == "bn":
            store.add(f"{spec.name}.gamma", np.ones(spec.cout, dtype=dtype), spec.trainable)
            store.add(f"{spec.name}.beta", np.zeros(spec.cout, dtype=dtype), spec.trainable)
            store.add(f"{spec.name}.running_mean", np.zeros(spec.cout, dtype=dtype), trainable=False)
            store.add(f"{spec.name}.running_var", np.ones(spec.cout, dtype=dtype), trainable=False)
        else:
            raise ValueError(f"unknown layer kind {spec.kind!r}")
    return store


def conv(store: ParamStore, name: str, x: Tensor, stride: int = 1) -> Tensor:
    w = store[f"{name}.weight"]
    return ops.conv2d(x, w, store[f"{name}.bias"], stride=stride, pad=w.shape[-1] // 2)


def deconv(store: ParamStore, name: str, x: Tensor, stride: int = 1) -> Tensor:
    w = store[f"{name}.weight"]
    # output_padding = stride - 1 makes the layer an exact x`stride` upsampler
    return ops.conv2d_transpose(
        x, w, store[f"{name}.bias"], stride=stride, pad=w.shape[-1] // 2, output_padding=stride - 1
    )


def bn(store: ParamStore, name: str, x: Tensor, training: bool, update_stats: bool = True) -> Tensor:
    return ops.batch_norm(
        x,
        store[f"{name}.gamma"],
        store[f"{name}.beta"],
        store[f"{name}.running_mean"].data,
        store[f"{name}.running_var"].data,
        training,
        update_stats=update_stats,
    )


def adam_step(
    store: ParamStore,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> None:
    """One bias-corrected Adam update of every trainable entry, then zero grads."""
    for name, p in store.entries():
        t = p.tensor
        if not p.trainable or not t.requires_grad:
            continue
        g = t.grad if t.grad is not None else np.zeros_like(t.data)
        if not np.isfinite(g).all():
            raise FloatingPointError(f"non-finite gradient in parameter {name!r}")
        if p.m is None:
            p.m = np.zeros_like(t.data)
            p.v = np.zeros_like(t.data)
        p.step += 1
        p.m *= beta1
        p.m += (1.0 - beta1) * g
        p.v *= beta2
        p.v += (1.0 - beta2) * (g * g)
        if lr != 0.0:
            mhat = p.m / (1.0 - beta1**p.step)
            vhat = p.v / (1.0 - beta2**p.step)
            t.data -= (lr * mhat / (np.sqrt(vhat) + eps)).astype(t.data.dtype)
        t.grad = None


# -- checkpoint -------------------------------------------------------------


def checkpoint_size(store: ParamStore) -> int:
    total = 12
    for name, t in store.items():
        total += 4 + len(name.encode("utf-8")) + 4 + 4 * t.ndim + 4 * t.size
    return total


def save_checkpoint(store: ParamStore, path) -> None:
    """Write every entry as little-endian float32.  Optimizer state is not saved."""
    chunks = [MAGIC, struct.pack("<II", FORMAT_VERSION, len(store))]
    for name, t in store.items():
        raw = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(raw)))
        chunks.append(raw)
        chunks.append(struct.pack(f"<I{t.ndim}I", t.ndim, *t.shape))
        chunks.append(np.ascontiguousarray(t.data, dtype="<f4").tobytes())
    Path(path).write_bytes(b"".join(chunks))


def load_checkpoint(path) -> ParamStore:
    buf = Path(path).read_bytes()
    if len(buf) < 12 or buf[:4] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    version, count = struct.unpack_from("<II", buf, 4)
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported format version {version}")
    pos = 12
    store = ParamStore()

    def take(n: int) -> bytes:
        nonlocal pos
        if pos + n > len(buf):
            raise CheckpointError(f"{path}: truncated file")
        out = buf[pos:pos + n]
        pos += n
        return out

    for _ in range(count):
        (nlen,) = struct.unpack("<I", take(4))
        name = take(nlen).decode("utf-8")
        (ndim,) = struct.unpack("<I", take(4))
        if ndim > _MAX_NDIM:
            raise CheckpointError(f"{path}: entry {name!r} has {ndim} dims")
        dims = struct.unpack(f"<{ndim}I", take(4 * ndim))
        numel = int(np.prod(dims, dtype=np.int64)) if ndim else 1
        if 4 * numel > len(buf) - pos:
            raise CheckpointError(f"{path}: entry {name!r} dims {dims} overflow the file")
        values = np.frombuffer(take(4 * numel), dtype="<f4").astype(np.float32).reshape(dims)
        trainable = not (name.endswith("running_mean") or name.endswith("running_var"))
        store.add(name, values, trainable)
    if pos != len(buf):
        raise CheckpointError(f"{path}: {len(buf) - pos} trailing bytes")
    return store
