"""Dense float tensors with a recorded tape for reverse-mode differentiation.

A :class:`Tensor` is both the value and the graph node: every operation that
involves a tensor with ``requires_grad`` records its parents and a backward
rule.  Calling :meth:`Tensor.backward` on a scalar walks the graph once in
reverse topological order and accumulates gradients into the leaves.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "ShapeError",
    "NonFiniteError",
    "no_grad",
    "is_grad_enabled",
    "as_tensor",
    "concat",
]


class ShapeError(ValueError):
    """Raised when operand dimensions are incompatible."""


class NonFiniteError(FloatingPointError):
    """Raised when an operation would produce NaN or Inf."""


_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def is_grad_enabled() -> bool:
    return _GRAD_ENABLED


BackwardFn = Callable[[np.ndarray], Sequence["np.ndarray | None"]]


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "op", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float64)
        self.data: np.ndarray = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self.op = "leaf"
        self._parents: tuple[Tensor, ...] = ()
        self._backward: BackwardFn | None = None

    # -- construction helpers -------------------------------------------------

    @classmethod
    def _result(cls, data: np.ndarray, parents: Sequence["Tensor"], backward: BackwardFn, op: str) -> "Tensor":
        if not np.isfinite(data).all():
            raise NonFiniteError(f"{op} produced a non-finite value")
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        out.op = op
        if _GRAD_ENABLED and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._backward = backward
        else:
            out.requires_grad = False
            out._parents = ()
            out._backward = None
        return out

    # -- basic properties -----------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dims(self) -> list[int]:
        return list(self.data.shape)

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, op={self.op}{flag})"

    # -- reverse pass ---------------------------------------------------------

    def backward(self) -> None:
        """Accumulate d(self)/d(leaf) into every reachable leaf's ``grad``."""
        if self.data.size != 1:
            raise ShapeError(f"backward() needs a scalar root, got shape {self.shape}")
        if not self.requires_grad:
            return
        order = _topological_order(self)
        grads: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = pg if key not in grads else grads[key] + pg

    # -- elementwise arithmetic ----------------------------------------------

    def __add__(self, other) -> "Tensor":
        other = _binary_operand(self, other, "add")
        return Tensor._result(
            self.data + other.data,
            (self, other),
            lambda g: (_reduce_to(g, self), _reduce_to(g, other)),
            "add",
        )

    __radd__ = __add__

    def __sub__(self, other) -> "Tensor":
        other = _binary_operand(self, other, "sub")
        return Tensor._result(
            self.data - other.data,
            (self, other),
            lambda g: (_reduce_to(g, self), _reduce_to(-g, other)),
            "sub",
        )

    def __rsub__(self, other) -> "Tensor":
        return _binary_operand(self, other, "sub") - self

    def __mul__(self, other) -> "Tensor":
        if isinstance(other, (int, float)):
            c = other
            return Tensor._result(self.data * c, (self,), lambda g: (g * c,), "scalar_mul")
        other = _binary_operand(self, other, "mul")
        a, b = self.data, other.data
        return Tensor._result(
            a * b,
            (self, other),
            lambda g: (_reduce_to(g * b, self), _reduce_to(g * a, other)),
            "mul",
        )

    __rmul__ = __mul__

    def __neg__(self) -> "Tensor":
        return self * -1.0

    def __truediv__(self, c) -> "Tensor":
        if not isinstance(c, (int, float)):
            raise TypeError("only division by a Python scalar is supported")
        return self * (1.0 / c)

    def abs(self) -> "Tensor":
        sign = np.sign(self.data)
        return Tensor._result(np.abs(self.data), (self,), lambda g: (g * sign,), "abs")

    def log(self) -> "Tensor":
        if (self.data <= 0).any():
            raise ValueError("log of a non-positive value")
        x = self.data
        return Tensor._result(np.log(x), (self,), lambda g: (g / x,), "log")

    def clamp_min(self, lo: float) -> "Tensor":
        keep = self.data > lo
        return Tensor._result(np.maximum(self.data, lo), (self,), lambda g: (g * keep,), "clamp_min")

    def sigmoid(self) -> "Tensor":
        x = self.data
        out = np.empty_like(x)
        pos = x >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
        ex = np.exp(x[~pos])
        out[~pos] = ex / (1.0 + ex)
        return Tensor._result(out, (self,), lambda g: (g * out * (1.0 - out),), "sigmoid")

    def relu(self) -> "Tensor":
        mask = self.data > 0
        return Tensor._result(self.data * mask, (self,), lambda g: (g * mask,), "relu")

    def sqrt(self) -> "Tensor":
        if (self.data < 0).any():
            raise ValueError("sqrt of a negative value")
        out = np.sqrt(self.data)
        safe = np.where(out > 0, out, 1.0)

        def back(g):
            # subgradient 0 at the origin keeps distance-like losses usable at equality
            return (np.where(out > 0, g * 0.5 / safe, 0.0),)

        return Tensor._result(out, (self,), back, "sqrt")

    def square(self) -> "Tensor":
        x = self.data
        return Tensor._result(x * x, (self,), lambda g: (2.0 * g * x,), "square")

    # -- reductions -----------------------------------------------------------

    def sum(self, axis=None) -> "Tensor":
        shape = self.shape
        axes = _norm_axes(axis, self.ndim)

        def back(g):
            return (np.broadcast_to(np.expand_dims(g, axes), shape).copy(),)

        return Tensor._result(np.asarray(self.data.sum(axis=axes)), (self,), back, "sum")

    def mean(self, axis=None) -> "Tensor":
        if self.data.size == 0:
            raise ShapeError("mean of an empty tensor")
        shape = self.shape
        axes = _norm_axes(axis, self.ndim)
        n = int(np.prod([shape[a] for a in axes])) if axes else 1

        def back(g):
            return (np.broadcast_to(np.expand_dims(g, axes) / n, shape).copy(),)

        return Tensor._result(np.asarray(self.data.mean(axis=axes)), (self,), back, "mean")

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        src = self.shape
        return Tensor._result(self.data.reshape(shape), (self,), lambda g: (g.reshape(src),), "reshape")


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x, dtype=dtype)


def concat(tensors: Iterable[Tensor], axis: int = 1) -> Tensor:
    """Concatenate along ``axis`` (channel axis by default)."""
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ShapeError("concat of nothing")
    ref = tensors[0].shape
    for t in tensors[1:]:
        if t.ndim != len(ref) or any(a != b for i, (a, b) in enumerate(zip(t.shape, ref)) if i != axis % len(ref)):
            raise ShapeError(f"concat shape mismatch: {ref} vs {t.shape}")
    bounds = np.cumsum([0] + [t.shape[axis] for t in tensors])

    def back(g):
        return tuple(
            np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=axis) for i in range(len(tensors))
        )

    return Tensor._result(np.concatenate([t.data for t in tensors], axis=axis), tensors, back, "concat")


def _binary_operand(a: Tensor, b, op: str) -> Tensor:
    if not isinstance(b, Tensor):
        b = Tensor(np.asarray(b, dtype=a.dtype))
    if b.shape != a.shape and b.ndim != 0 and a.ndim != 0:
        raise ShapeError(f"{op}: dimension mismatch {a.shape} vs {b.shape}")
    return b


def _reduce_to(g: np.ndarray, target: Tensor) -> np.ndarray:
    if target.ndim == 0 and g.ndim != 0:
        return np.asarray(g.sum())
    return g


def _norm_axes(axis, ndim: int) -> tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(sorted(a % ndim for a in axis))


def _topological_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen and p.requires_grad:
                stack.append((p, False))
    return order
