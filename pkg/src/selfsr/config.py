"""Run configuration and its flat ``key = value`` text format."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, fields
from pathlib import Path

from .losses import LossWeights

__all__ = ["RunConfig", "VARIANTS", "ConfigError"]

VARIANTS = ("full", "gan_alone", "cycle_alone", "gan_fwd", "gan_bwd", "gan_cycle")


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    scale: int = 4
    alpha: float = 5.0
    beta: float = 0.1
    gamma: float = 5.0
    eta: float = 0.3
    noise_std: float = 0.03
    factors: tuple[float, ...] = (1.0, 0.9, 0.8, 0.7, 0.6)
    crop: int = 64
    lr_start: float = 1e-3
    lr_min: float = 1e-6
    lr_check_every: int = 200
    lr_window: int = 600
    d_lr_factor: float = 1.0
    step_cap: int = 3000
    history_size: int = 50
    seed: int = 0
    variant: str = "full"
    ensemble: bool = True
    back_projection: bool = True
    bp_iters: int = 10
    bp_each_member: bool = False
    feature_weights: str = ""
    out: str = "out"

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}; choose from {', '.join(VARIANTS)}")
        if self.scale < 1:
            raise ConfigError("scale must be >= 1")
        if self.crop < 16 or self.crop % 16:
            raise ConfigError("crop must be a positive multiple of 16")
        if not self.factors or any(not 0 < f <= 1 for f in self.factors):
            raise ConfigError("factors must lie in (0, 1]")
        if not 0 < self.lr_min <= self.lr_start:
            raise ConfigError("need 0 < lr_min <= lr_start")
        if self.step_cap < 0 or self.bp_iters < 0 or self.lr_check_every < 1 or self.lr_window < 2:
            raise ConfigError("step_cap/bp_iters must be >= 0, lr_check_every >= 1, lr_window >= 2")
        LossWeights(self.alpha, self.beta, self.gamma, self.eta)

    # -- derived settings ----------------------------------------------------

    def switches(self):
        """Loss weights and toggles realising the configured ablation variant."""
        from .trainer import Switches

        a, b, g, e = self.alpha, self.beta, self.gamma, self.eta
        cyc_lr = cyc_hr = True
        update_d = True
        if self.variant == "gan_alone":
            a = b = e = 0.0
        elif self.variant == "cycle_alone":
            g = 0.0
            update_d = False
        elif self.variant in ("gan_fwd", "gan_bwd", "gan_cycle"):
            a = b = 0.0
            cyc_hr = self.variant != "gan_fwd"
            cyc_lr = self.variant != "gan_bwd"
        return Switches(LossWeights(a, b, g, e), cyc_lr, cyc_hr, update_d)

    def effective_crop(self, shape) -> int:
        """Training crop for an input of ``shape``; shrinks for small images."""
        side = min(shape)
        if side >= self.crop:
            return self.crop
        c = side - side % 16
        if c < 32:
            raise ConfigError(f"image {shape[0]}x{shape[1]} too small to train on (need >= 32 px)")
        return c

    # -- text format ---------------------------------------------------------

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            lines.append(f"{f.name} = {_format(getattr(self, f.name))}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str, **overrides) -> "RunConfig":
        values: dict = {}
        known = {f.name: f for f in fields(cls)}
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"line {lineno}: expected key = value")
            key, value = (s.strip() for s in line.split("=", 1))
            if key not in known:
                raise ConfigError(f"line {lineno}: unknown key {key!r}")
            values[key] = _parse(known[key], value, lineno)
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**values)

    @classmethod
    def load(cls, path, **overrides) -> "RunConfig":
        return cls.from_text(Path(path).read_text(), **overrides)

    def save(self, path) -> None:
        Path(path).write_text(self.to_text())

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)


def _format(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ",".join(repr(float(x)) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _parse(f: dataclasses.Field, value: str, lineno: int):
    kind = f.type if isinstance(f.type, str) else getattr(f.type, "__name__", str(f.type))
    try:
        if kind == "bool":
            low = value.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(value)
            return low in ("true", "1", "yes")
        if kind == "int":
            return int(value)
        if kind == "float":
            return float(value)
        if kind.startswith("tuple"):
            return tuple(float(s) for s in value.split(",") if s.strip())
        return value
    except ValueError:
        raise ConfigError(f"line {lineno}: bad value {value!r} for {f.name}") from None
