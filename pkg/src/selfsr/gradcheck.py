"""Central finite-difference checks of every differentiable op and loss."""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import losses, ops
from .models import FeatureExtractor
from .tensor import Tensor, concat, no_grad

__all__ = ["numerical_grad", "relative_error", "check_gradients", "CheckResult", "CASES", "run_suite"]


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    denom = max(np.linalg.norm(a), np.linalg.norm(b))
    if denom < 1e-12:
        return float(np.linalg.norm(a - b))
    return float(np.linalg.norm(a - b) / denom)


def numerical_grad(f: Callable[..., Tensor], arrays: list[np.ndarray], h: float = 1e-4) -> list[np.ndarray]:
    """Central differences of scalar ``f`` w.r.t. every element of every array."""
    grads = []
    with no_grad():
        for k, arr in enumerate(arrays):
            g = np.zeros_like(arr)
            flat = arr.reshape(-1)
            gflat = g.reshape(-1)
            for i in range(flat.size):
                old = flat[i]
                flat[i] = old + h
                up = f(*[Tensor(a) for a in arrays]).item()
                flat[i] = old - h
                dn = f(*[Tensor(a) for a in arrays]).item()
                flat[i] = old
                gflat[i] = (up - dn) / (2 * h)
            grads.append(g)
    return grads


def analytic_grad(f: Callable[..., Tensor], arrays: list[np.ndarray]) -> list[np.ndarray]:
    leaves = [Tensor(a.copy(), requires_grad=True) for a in arrays]
    f(*leaves).backward()
    return [t.grad if t.grad is not None else np.zeros_like(t.data) for t in leaves]


def check_gradients(f, arrays, h: float = 1e-4) -> float:
    """Largest relative error over the inputs of ``f``."""
    num = numerical_grad(f, [np.array(a, dtype=np.float64) for a in arrays], h)
    ana = analytic_grad(f, [np.array(a, dtype=np.float64) for a in arrays])
    return max(relative_error(a, n) for a, n in zip(ana, num))


@dataclass
class CheckResult:
    name: str
    instances: int
    max_rel_err: float
    tol: float
    seconds: float

    @property
    def passed(self) -> bool:
        return self.max_rel_err <= self.tol


# -- instance generators ------------------------------------------------------
# each returns (scalar function, list of input arrays) for one random instance


def _u(rng, *shape):
    return rng.uniform(-1.0, 1.0, shape)


def _off_zero(rng, *shape, margin=0.05):
    x = _u(rng, *shape)
    return np.where(np.abs(x) < margin, np.sign(x + 1e-300) * margin + x, x)


def _shape(rng):
    return tuple(int(v) for v in rng.integers(1, 4, size=int(rng.integers(1, 4))))


def _proj(rng, shape):
    r = Tensor(rng.standard_normal(shape))
    return lambda out: (out * r).sum()


def _unary(method, gen=_u):
    def make(rng):
        shape = _shape(rng)
        p = _proj(rng, shape)
        return (lambda a: p(getattr(a, method)())), [gen(rng, *shape)]

    return make


def _binary(fn):
    def make(rng):
        shape = _shape(rng)
        p = _proj(rng, shape)
        return (lambda a, b: p(fn(a, b))), [_u(rng, *shape), _u(rng, *shape)]

    return make


def _scalar_broadcast(rng):
    shape = _shape(rng)
    p = _proj(rng, shape)
    return (lambda a, s: p(a * s + s)), [_u(rng, *shape), _u(rng)]


def _scalar_mul(rng):
    shape = _shape(rng)
    c = float(rng.uniform(-2, 2))
    p = _proj(rng, shape)
    return (lambda a: p(a * c)), [_u(rng, *shape)]


def _log(rng):
    shape = _shape(rng)
    p = _proj(rng, shape)
    return (lambda a: p(a.log())), [rng.uniform(0.2, 2.0, shape)]


def _sqrt(rng):
    shape = _shape(rng)
    p = _proj(rng, shape)
    return (lambda a: p(a.sqrt())), [rng.uniform(0.2, 2.0, shape)]


def _mean_axis(rng):
    shape = (2, 3, 2, 2)
    axis = tuple(int(a) for a in rng.choice(4, size=int(rng.integers(1, 4)), replace=False))
    out_shape = tuple(s for i, s in enumerate(shape) if i not in axis)
    p = _proj(rng, out_shape)
    return (lambda a: p(a.mean(axis=axis))), [_u(rng, *shape)]


def _mean_all(rng):
    return (lambda a: a.mean()), [_u(rng, *_shape(rng))]


def _sum_all(rng):
    shape = _shape(rng)
    w = Tensor(rng.standard_normal(shape))
    return (lambda a: (a * w).sum() * 0.5), [_u(rng, *shape)]


def _clamp(rng):
    shape = _shape(rng)
    p = _proj(rng, shape)
    return (lambda a: p(a.clamp_min(0.0))), [_off_zero(rng, *shape)]


def _concat(rng):
    a_shape = (1, int(rng.integers(1, 3)), 3, 2)
    b_shape = (1, int(rng.integers(1, 3)), 3, 2)
    p = _proj(rng, (1, a_shape[1] + b_shape[1], 3, 2))
    return (lambda a, b: p(concat([a, b], axis=1))), [_u(rng, *a_shape), _u(rng, *b_shape)]


def _conv(rng):
    b, c, o = (int(v) for v in rng.integers(1, 3, 3))
    k = int(rng.choice([1, 2, 3]))
    stride = int(rng.integers(1, 3))
    pad = int(rng.integers(0, 2))
    h, w = (int(v) for v in rng.integers(max(k, 3), 7, 2))
    ho = ops.conv_output_size(h, k, stride, pad)
    wo = ops.conv_output_size(w, k, stride, pad)
    p = _proj(rng, (b, o, ho, wo))
    f = lambda x, wt, bias: p(ops.conv2d(x, wt, bias, stride, pad))  # noqa: E731
    return f, [_u(rng, b, c, h, w), _u(rng, o, c, k, k), _u(rng, o)]


def _deconv(rng):
    b, c, o = (int(v) for v in rng.integers(1, 3, 3))
    k = int(rng.choice([1, 2, 3]))
    stride = int(rng.integers(1, 3))
    pad = int(rng.integers(0, min(2, k)))
    op = int(rng.integers(0, stride))
    h, w = (int(v) for v in rng.integers(2, 5, 2))
    ho = ops.conv_transpose_output_size(h, k, stride, pad, op)
    wo = ops.conv_transpose_output_size(w, k, stride, pad, op)
    p = _proj(rng, (b, o, ho, wo))
    f = lambda x, wt, bias: p(ops.conv2d_transpose(x, wt, bias, stride, pad, op))  # noqa: E731
    return f, [_u(rng, b, c, h, w), _u(rng, c, o, k, k), _u(rng, o)]


def _bn(training):
    def make(rng):
        b, c, h, w = int(rng.integers(1, 3)), int(rng.integers(1, 4)), 3, 2
        rm = rng.uniform(-0.5, 0.5, c)
        rv = rng.uniform(0.5, 1.5, c)
        p = _proj(rng, (b, c, h, w))

        def f(x, g, bt):
            return p(ops.batch_norm(x, g, bt, rm.copy(), rv.copy(), training))

        return f, [_u(rng, b, c, h, w), rng.uniform(0.5, 1.5, c), _u(rng, c)]

    return make


def _bilinear(rng):
    scale = [2, 4, 0.5][int(rng.integers(3))]
    h, w = (int(v) for v in rng.integers(2, 6, 2) * 2)
    x = _u(rng, 1, 1, h, w)
    out = ops.resize_bilinear(Tensor(x), scale)
    p = _proj(rng, out.shape)
    return (lambda a: p(ops.resize_bilinear(a, scale))), [x]


def _l1_pairs(rng, shape):
    """(a, a + d, b, b + d') with every difference bounded away from zero."""
    a, b = _u(rng, *shape), _u(rng, *shape)
    return [a, a + _off_zero(rng, *shape), b + _off_zero(rng, *shape), b]


def _pixel(rng):
    shape = (int(rng.integers(1, 3)), 1, 4, 4)
    return losses.pixel_loss, _l1_pairs(rng, shape)


def _cycle(rng):
    shape = (int(rng.integers(1, 3)), 1, 4, 4)
    sr = _l1_pairs(rng, shape)
    # argument order is (x, x_cyc, y, y_cyc)
    return losses.cycle_loss, [sr[0], sr[1], sr[3], sr[2]]


_TINY_PHI: dict = {}


def _tiny_phi():
    if "phi" not in _TINY_PHI:
        _TINY_PHI["phi"] = FeatureExtractor(seed=7, dtype=np.float64)
    return _TINY_PHI["phi"]


def _perceptual(rng):
    phi = _tiny_phi()
    shape = (int(rng.integers(1, 3)), 1, 4, 4)
    return (lambda *t: losses.perceptual_loss(phi, *t)), [rng.uniform(0, 1, shape) for _ in range(4)]


class _SigmoidCritic:
    """Small differentiable stand-in for a discriminator."""

    def __init__(self, rng):
        self.w = Tensor(rng.standard_normal((1, 2, 3, 3)) * 0.5)

    def __call__(self, cand, cond):
        return ops.conv2d(concat([cand, cond], axis=1), self.w, pad=1).sigmoid()


def _adv_g(rng):
    d_hr, d_lr = _SigmoidCritic(rng), _SigmoidCritic(rng)
    shape = (1, 1, 4, 4)

    def f(sr, x, lr_hat, y):
        return losses.adversarial_loss_g(d_hr, (sr, x), d_lr, (lr_hat, y))

    return f, [_u(rng, *shape) for _ in range(4)]


def _disc(rng):
    shape = (1, 1, 4, 4)
    fake = (Tensor(_u(rng, *shape)), Tensor(_u(rng, *shape)))

    def f(real, cond, w):
        critic = lambda a, b: ops.conv2d(concat([a, b], axis=1), w, pad=1).sigmoid()  # noqa: E731
        return losses.discriminator_loss(critic, (real, cond), fake)

    return f, [_u(rng, *shape), _u(rng, *shape), rng.standard_normal((1, 2, 3, 3)) * 0.5]


def _total(rng):
    w = losses.LossWeights(*rng.uniform(0.1, 5.0, 4))
    phi = _tiny_phi()
    shape = (1, 1, 4, 4)

    def f(sr, y, lr_hat, x, p_hr, p_lr, x_cyc, y_cyc):
        terms = losses.LossTerms(
            pixel=losses.pixel_loss(sr, y, lr_hat, x),
            perceptual=losses.perceptual_loss(phi, sr, y, lr_hat, x),
            adv_G=losses.adversarial_term(p_hr),
            adv_F=losses.adversarial_term(p_lr),
            cycle_LR=losses.mean_abs(x_cyc, x),
            cycle_HR=losses.mean_abs(y_cyc, y),
        )
        return losses.total_loss(w, terms)[0]

    sr, y, lr_hat, x = (v * 0.5 + 0.5 for v in _l1_pairs(rng, shape))
    probs = [rng.uniform(0.1, 0.9, (1, 1, 2, 2)) for _ in range(2)]
    cyc = [x + _off_zero(rng, *shape) * 0.3, y + _off_zero(rng, *shape) * 0.3]
    return f, [sr, y, lr_hat, x, *probs, *cyc]


CASES: dict[str, Callable] = {
    "add": _binary(lambda a, b: a + b),
    "sub": _binary(lambda a, b: a - b),
    "mul": _binary(lambda a, b: a * b),
    "scalar_broadcast": _scalar_broadcast,
    "scalar_mul": _scalar_mul,
    "abs": _unary("abs", _off_zero),
    "log": _log,
    "sigmoid": _unary("sigmoid", lambda rng, *s: _u(rng, *s) * 4),
    "relu": _unary("relu", _off_zero),
    "sqrt": _sqrt,
    "square": _unary("square"),
    "clamp_min": _clamp,
    "mean": _mean_all,
    "mean_axis": _mean_axis,
    "sum": _sum_all,
    "concat": _concat,
    "conv2d": _conv,
    "conv2d_transpose": _deconv,
    "batch_norm_train": _bn(True),
    "batch_norm_eval": _bn(False),
    "resize_bilinear": _bilinear,
    "pixel_loss": _pixel,
    "perceptual_loss": _perceptual,
    "adversarial_loss_g": _adv_g,
    "discriminator_loss": _disc,
    "cycle_loss": _cycle,
    "total_loss": _total,
}


# losses routed through the feature extractor cross many ReLU kinks; a smaller
# step keeps the central difference on one linear piece
STEP_OVERRIDES = {"perceptual_loss": 1e-6, "total_loss": 1e-6}


def run_suite(instances: int = 20, seed: int = 0, tol: float = 1e-4, h: float = 1e-4, names=None) -> list[CheckResult]:
    results = []
    for name, make in CASES.items():
        if names and name not in names:
            continue
        step = STEP_OVERRIDES.get(name, h)
        rng = np.random.default_rng([seed, len(name), sum(map(ord, name))])
        t0 = time.perf_counter()
        worst = 0.0
        for _ in range(instances):
            f, arrays = make(rng)
            worst = max(worst, check_gradients(f, arrays, step))
        results.append(CheckResult(name, instances, worst, tol, time.perf_counter() - t0))
    return results
