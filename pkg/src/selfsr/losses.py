"""Loss terms of the cycle-consistent SR objective.

All norms are normalised per image: l1 terms are mean absolute differences and
the feature distance is a root-mean-square, so the default weights keep their
meaning for any crop size.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields

from .tensor import ShapeError, Tensor, as_tensor

__all__ = [
    "LossWeights",
    "LossReport",
    "LossTerms",
    "LOG_FLOOR",
    "pixel_loss",
    "perceptual_loss",
    "adversarial_loss_g",
    "adversarial_term",
    "discriminator_loss",
    "cycle_loss",
    "total_loss",
    "mean_abs",
    "rms_distance",
]

LOG_FLOOR = 1e-12


@dataclass(frozen=True)
class LossWeights:
    pixel: float = 5.0
    perceptual: float = 0.1
    adversarial: float = 5.0
    cycle: float = 0.3

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not math.isfinite(v) or v < 0:
                raise ValueError(f"loss weight {f.name} must be finite and >= 0, got {v}")


@dataclass
class LossReport:
    pixel: float = 0.0
    perceptual: float = 0.0
    adv_G: float = 0.0
    adv_F: float = 0.0
    cycle_LR: float = 0.0
    cycle_HR: float = 0.0
    total: float = 0.0

    def as_dict(self) -> dict[str, float]:
        return asdict(self)


@dataclass
class LossTerms:
    """Graph-carrying loss terms of one batch; ``None`` marks a disabled term."""

    pixel: Tensor | None = None
    perceptual: Tensor | None = None
    adv_G: Tensor | None = None
    adv_F: Tensor | None = None
    cycle_LR: Tensor | None = None
    cycle_HR: Tensor | None = None


def _same(a: Tensor, b: Tensor, what: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{what}: dimension mismatch {a.shape} vs {b.shape}")


def mean_abs(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _same(a, b, "l1")
    return (a - b).abs().mean()


def rms_distance(fa: Tensor, fb: Tensor) -> Tensor:
    """Batch mean of the per-image root-mean-square difference."""
    _same(fa, fb, "feature distance")
    d = (fa - fb).square()
    per_image = d.mean(axis=tuple(range(1, d.ndim))).sqrt()
    return per_image.mean()


def pixel_loss(sr, y, lr_hat, x) -> Tensor:
    return mean_abs(sr, y) + mean_abs(lr_hat, x)


def perceptual_loss(phi, sr, y, lr_hat, x) -> Tensor:
    return rms_distance(phi(sr), phi(y)) + rms_distance(phi(lr_hat), phi(x))


def adversarial_term(probs: Tensor) -> Tensor:
    """Mean of -log p over batch and patches, with p floored at LOG_FLOOR."""
    return -(as_tensor(probs).clamp_min(LOG_FLOOR).log().mean())


def adversarial_loss_g(d_hr, sr_pair, d_lr, lr_pair) -> Tensor:
    """Generator-side adversarial loss of both GANs.

    ``sr_pair`` and ``lr_pair`` are (candidate, condition) tuples passed to the
    respective discriminator.
    """
    return adversarial_term(d_hr(*sr_pair)) + adversarial_term(d_lr(*lr_pair))


def discriminator_loss(d, real_pair, fake_pair) -> Tensor:
    """-log D(real) - log(1 - D(fake)), each averaged over patches.

    The fake candidate is detached so no gradient reaches its generator.
    """
    fake = tuple(as_tensor(t).detach() for t in fake_pair)
    p_real = d(*real_pair)
    p_fake = d(*fake)
    return adversarial_term(p_real) + adversarial_term(1.0 - p_fake)


def cycle_loss(x, x_cyc, y, y_cyc) -> Tensor:
    return mean_abs(x_cyc, x) + mean_abs(y_cyc, y)


def total_loss(weights: LossWeights, terms: LossTerms) -> tuple[Tensor, LossReport]:
    """Weighted sum of the enabled terms and a float report of every term."""
    plan = (
        ("pixel", weights.pixel),
        ("perceptual", weights.perceptual),
        ("adv_G", weights.adversarial),
        ("adv_F", weights.adversarial),
        ("cycle_LR", weights.cycle),
        ("cycle_HR", weights.cycle),
    )
    report = LossReport()
    total = None
    acc = 0.0
    for name, w in plan:
        t = getattr(terms, name)
        if t is None:
            continue
        value = t.item()
        if not math.isfinite(value):
            raise FloatingPointError(f"loss term {name} is not finite")
        setattr(report, name, value)
        if w == 0.0:
            continue
        acc += w * value
        total = t * w if total is None else total + t * w
    if total is None:
        total = Tensor(0.0)
    report.total = acc
    return total, report
