"""Cycle-consistent adversarial training on one image."""

from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .config import RunConfig
from .losses import (
    LossReport,
    LossTerms,
    LossWeights,
    adversarial_term,
    discriminator_loss,
    mean_abs,
    pixel_loss,
    perceptual_loss,
    total_loss,
)
from .models import DegradationGenerator, FeatureExtractor, MultiScaleGenerator, PatchDiscriminator
from .nn import ParamStore, adam_step
from .sampler import SamplePair, Sampler
from .tensor import Tensor

log = logging.getLogger(__name__)

__all__ = [
    "HistoryBuffer",
    "TrainState",
    "CycleModels",
    "StepLog",
    "Switches",
    "train_step",
    "update_lr",
    "fit",
    "FitResult",
    "write_loss_csv",
    "LOSS_CSV_FIELDS",
]


class HistoryBuffer:
    """Ring buffer of past fakes; each draw returns the newest item half the time."""

    def __init__(self, capacity: int = 50, rng=None):
        self.capacity = capacity
        self.items: list = []
        self._next = 0
        self._newest = None
        self.rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)

    def __len__(self) -> int:
        return len(self.items)

    def push(self, item) -> None:
        if self.capacity <= 0:
            self._newest = item
            return
        if len(self.items) < self.capacity:
            self.items.append(item)
        else:
            self.items[self._next] = item
        self._newest = item
        self._next = (self._next + 1) % self.capacity

    def sample(self):
        if not self.items:
            return self._newest
        if self.rng.random() < 0.5:
            return self._newest
        return self.items[int(self.rng.integers(len(self.items)))]


@dataclass
class Switches:
    """Which loss terms enter the objective and whether the discriminators learn."""

    weights: LossWeights = field(default_factory=LossWeights)
    cycle_lr: bool = True
    cycle_hr: bool = True
    update_d: bool = True


@dataclass
class StepLog:
    step: int
    lr: float
    report: LossReport
    contributions: dict[str, float]
    d_hr: float = 0.0
    d_lr: float = 0.0


@dataclass
class TrainState:
    lr: float = 1e-3
    lr_min: float = 1e-6
    step: int = 0
    loss_history: list[float] = field(default_factory=list)
    log: list[StepLog] = field(default_factory=list)
    rng: np.random.Generator = field(default_factory=lambda: np.random.default_rng(0))
    check_every: int = 200
    window: int = 600
    decays: int = 0

    @property
    def converged(self) -> bool:
        return self.lr <= self.lr_min * (1 + 1e-9)


@dataclass
class CycleModels:
    G: MultiScaleGenerator
    F: DegradationGenerator
    D_hr: PatchDiscriminator
    D_lr: PatchDiscriminator
    phi: FeatureExtractor
    hist_hr: HistoryBuffer
    hist_lr: HistoryBuffer

    @classmethod
    def create(cls, seed: int, noise_std: float = 0.03, history: int = 50, dtype=np.float32, phi=None) -> "CycleModels":
        seeds = np.random.SeedSequence(seed).generate_state(6)
        return cls(
            G=MultiScaleGenerator(int(seeds[0]), dtype),
            F=DegradationGenerator(int(seeds[1]), noise_std, dtype),
            D_hr=PatchDiscriminator(int(seeds[2]), dtype),
            D_lr=PatchDiscriminator(int(seeds[3]), dtype),
            phi=phi if phi is not None else FeatureExtractor(dtype=dtype),
            hist_hr=HistoryBuffer(history, np.random.default_rng(int(seeds[4]))),
            hist_lr=HistoryBuffer(history, np.random.default_rng(int(seeds[5]))),
        )

    @property
    def generators(self) -> ParamStore:
        return ParamStore.merge(self.G.params.prefixed("G"), self.F.params.prefixed("F"))

    def checkpoint_store(self) -> ParamStore:
        return ParamStore.merge(
            self.G.params.prefixed("G"),
            self.F.params.prefixed("F"),
            self.D_hr.params.prefixed("D_hr"),
            self.D_lr.params.prefixed("D_lr"),
        )


CONTRIBUTION_NAMES = ("pixel", "perceptual", "adv_G", "adv_F", "cycle_LR", "cycle_HR")


def _contributions(report: LossReport, w: LossWeights, terms: LossTerms) -> dict[str, float]:
    weight = {
        "pixel": w.pixel,
        "perceptual": w.perceptual,
        "adv_G": w.adversarial,
        "adv_F": w.adversarial,
        "cycle_LR": w.cycle,
        "cycle_HR": w.cycle,
    }
    return {
        n: (weight[n] * getattr(report, n) if getattr(terms, n) is not None and weight[n] else 0.0)
        for n in CONTRIBUTION_NAMES
    }


def train_step(
    state: TrainState,
    models: CycleModels,
    pair: SamplePair,
    switches: Switches | None = None,
    d_lr_factor: float = 1.0,
    check_isolation: bool = False,
) -> StepLog:
    """One generator update followed by one update of each discriminator."""
    sw = switches or Switches()
    w = sw.weights
    G, F = models.G, models.F
    x = Tensor(pair.x)
    y = Tensor(pair.y)
    use_adv = w.adversarial > 0

    if check_isolation:
        d_sums = (models.D_hr.params.checksum(), models.D_lr.params.checksum())

    # -- generators ----------------------------------------------------------
    models.D_hr.params.set_trainable(False)
    models.D_lr.params.set_trainable(False)
    sr = G(x)
    lr_hat = F(y, state.rng)
    terms = LossTerms(pixel=pixel_loss(sr, y, lr_hat, x))
    if w.perceptual > 0:
        terms.perceptual = perceptual_loss(models.phi, sr, y, lr_hat, x)
    if use_adv:
        # batch statistics as in the D update, but the running buffers belong to D
        terms.adv_G = adversarial_term(models.D_hr(sr, x, update_stats=False))
        terms.adv_F = adversarial_term(models.D_lr(lr_hat, y, update_stats=False))
    if sw.cycle_lr and w.cycle > 0:
        terms.cycle_LR = mean_abs(F(sr, state.rng), x)
    if sw.cycle_hr and w.cycle > 0:
        terms.cycle_HR = mean_abs(G(lr_hat), y)
    total, report = total_loss(w, terms)
    gen = models.generators
    total.backward()
    adam_step(gen, state.lr)
    models.D_hr.params.set_trainable(True)
    models.D_lr.params.set_trainable(True)

    if check_isolation:
        if (models.D_hr.params.checksum(), models.D_lr.params.checksum()) != d_sums:
            raise AssertionError("generator update changed discriminator parameters")
        g_sum = gen.checksum()

    # -- discriminators ------------------------------------------------------
    models.hist_hr.push((sr.data.copy(), pair.x))
    models.hist_lr.push((lr_hat.data.copy(), pair.y))
    d_hr_val = d_lr_val = 0.0
    if sw.update_d and use_adv:
        d_lr_rate = state.lr * d_lr_factor
        for d, hist, real in ((models.D_hr, models.hist_hr, (y, x)), (models.D_lr, models.hist_lr, (x, y))):
            fake = hist.sample()
            loss = discriminator_loss(d, real, (Tensor(fake[0]), Tensor(fake[1])))
            val = loss.item()
            if not math.isfinite(val):
                raise FloatingPointError("discriminator loss is not finite")
            loss.backward()
            adam_step(d.params, d_lr_rate)
            if d is models.D_hr:
                d_hr_val = val
            else:
                d_lr_val = val
    gen.zero_grad()

    if check_isolation and gen.checksum() != g_sum:
        raise AssertionError("discriminator update changed generator parameters")

    state.step += 1
    state.loss_history.append(report.pixel)
    entry = StepLog(state.step, state.lr, report, _contributions(report, w, terms), d_hr_val, d_lr_val)
    state.log.append(entry)
    return entry


def update_lr(state: TrainState) -> float:
    """Divide the rate by 10 when the pixel loss stops falling.

    Every ``check_every`` steps a line is fitted to the last ``window``
    pixel losses; the rate drops unless the slope is below minus the
    residual standard deviation divided by the window length.
    """
    hist = state.loss_history
    if state.step == 0 or state.step % state.check_every or len(hist) < state.check_every:
        return state.lr
    ys = np.asarray(hist[-state.window:], dtype=np.float64)
    ts = np.arange(len(ys), dtype=np.float64)
    slope, intercept = np.polyfit(ts, ys, 1)
    resid = ys - (slope * ts + intercept)
    # the tiny extra term keeps a perfectly flat history from passing on roundoff
    noise = resid.std() + 1e-9 * np.abs(ys).mean()
    if slope >= -noise / state.window:
        state.decays += 1
        state.lr = max(state.lr / 10.0, state.lr_min)
        log.info("step %d: loss plateau, lr -> %g", state.step, state.lr)
    return state.lr


@dataclass
class FitResult:
    models: CycleModels
    state: TrainState
    seconds: float

    @property
    def log(self) -> list[StepLog]:
        return self.state.log


def fit(image: np.ndarray, config: RunConfig, check_isolation: bool = False, progress=None) -> FitResult:
    """Train all four networks on ``image`` (2-d array in [0, 1])."""
    t0 = time.perf_counter()
    seeds = np.random.SeedSequence(config.seed).generate_state(3)
    phi = FeatureExtractor.from_checkpoint(config.feature_weights) if config.feature_weights else None
    models = CycleModels.create(int(seeds[0]), config.noise_std, config.history_size, phi=phi)
    crop = config.effective_crop(image.shape)
    sampler = Sampler.from_image(image, config.scale, crop, config.factors, np.random.default_rng(int(seeds[1])))
    state = TrainState(
        lr=config.lr_start,
        lr_min=config.lr_min,
        rng=np.random.default_rng(int(seeds[2])),
        check_every=config.lr_check_every,
        window=config.lr_window,
    )
    switches = config.switches()
    log.info("training on %d fathers, crop %d, variant %s", len(sampler), crop, config.variant)
    while state.step < config.step_cap:
        entry = train_step(state, models, sampler.next_pair(), switches, config.d_lr_factor, check_isolation)
        update_lr(state)
        if progress is not None:
            progress(entry)
        if state.converged:
            break
    return FitResult(models, state, time.perf_counter() - t0)


LOSS_CSV_FIELDS = (
    ["step", "lr"]
    + list(LossReport.__dataclass_fields__)
    + [f"c_{n}" for n in CONTRIBUTION_NAMES]
    + ["d_hr", "d_lr"]
)


def write_loss_csv(entries: list[StepLog], path) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(LOSS_CSV_FIELDS)
        for e in entries:
            r = e.report
            wr.writerow(
                [e.step, repr(e.lr)]
                + [repr(getattr(r, n)) for n in LossReport.__dataclass_fields__]
                + [repr(e.contributions[n]) for n in CONTRIBUTION_NAMES]
                + [repr(e.d_hr), repr(e.d_lr)]
            )
