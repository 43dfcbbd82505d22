"""Network architectures.

* :class:`MultiScaleGenerator` - LR canvas -> HR image, three encoder/decoder
  branches whose detail outputs are added to the input and fused by a conv.
* :class:`DegradationGenerator` - HR image + one noise channel -> quarter-size
  map, bilinearly upsampled back onto the HR canvas.
* :class:`PatchDiscriminator` - (candidate, condition) -> grid of per-patch
  real probabilities.
* :class:`FeatureExtractor` - frozen conv stack used by the perceptual loss.
"""

from __future__ import annotations

import numpy as np

from . import ops
from .nn import LayerSpec, ParamStore, bn, conv, deconv, init_params, load_checkpoint
from .tensor import ShapeError, Tensor, as_tensor, concat

__all__ = [
    "MultiScaleGenerator",
    "DegradationGenerator",
    "PatchDiscriminator",
    "FeatureExtractor",
    "generator_layers",
    "degradation_layers",
    "discriminator_layers",
    "feature_layers",
    "FEATURE_SEED",
]

# stage widths of the deepest branch; shallower branches use a prefix
_STAGE_WIDTHS = (32, 32, 64)
FEATURE_SEED = 20_200_807


def _stage_width(stage: int) -> int:
    return _STAGE_WIDTHS[stage - 1]


def generator_layers(branches: int = 3) -> list[LayerSpec]:
    layers = []
    for j in range(1, branches + 1):
        cin = 1
        for k in range(1, j + 1):
            width = _stage_width(k)
            layers.append(LayerSpec(f"scale{j}.enc{k}.conv1", "conv", cin, width))
            layers.append(LayerSpec(f"scale{j}.enc{k}.conv2", "conv", width, width, stride=2))
            cin = width
        for k in range(j, 0, -1):
            width = _stage_width(k)
            last = 1 if k == 1 else width
            layers.append(LayerSpec(f"scale{j}.dec{k}.deconv1", "deconv", cin, width, stride=2))
            layers.append(LayerSpec(f"scale{j}.dec{k}.deconv2", "deconv", width, last))
            cin = width
    layers.append(LayerSpec("fuse", "conv", branches, 1))
    return layers


def _check_image(x: Tensor, multiple: int, what: str) -> None:
    if x.ndim != 4 or x.shape[1] != 1:
        raise ShapeError(f"{what}: expected Bx1xHxW input, got {x.shape}")
    h, w = x.shape[-2:]
    if h % multiple or w % multiple:
        raise ShapeError(f"{what}: spatial dims {h}x{w} must be divisible by {multiple}")


class MultiScaleGenerator:
    """Sum-of-details generator: each branch adds a residual to the canvas and a
    3x3 conv fuses the branch outputs."""

    def __init__(self, seed: int = 0, dtype=np.float32, params: ParamStore | None = None, branches: int = 3):
        self.branches = branches
        self.layers = generator_layers(branches)
        if params is None:
            params = init_params(self.layers, seed, dtype)
        self.params = params

    @property
    def multiple(self) -> int:
        return 2**self.branches

    def branch(self, j: int, x: Tensor) -> Tensor:
        """Detail image predicted by branch ``j``."""
        p = self.params
        h = x
        for k in range(1, j + 1):
            h = conv(p, f"scale{j}.enc{k}.conv1", h).relu()
            h = conv(p, f"scale{j}.enc{k}.conv2", h, stride=2).relu()
        for k in range(j, 0, -1):
            h = deconv(p, f"scale{j}.dec{k}.deconv1", h, stride=2).relu()
            h = deconv(p, f"scale{j}.dec{k}.deconv2", h)
            if k != 1:
                h = h.relu()
        return h

    def __call__(self, x) -> Tensor:
        x = as_tensor(x)
        _check_image(x, self.multiple, "generator")
        recon = [x + self.branch(j, x) for j in range(1, self.branches + 1)]
        return conv(self.params, "fuse", concat(recon, axis=1))


def degradation_layers() -> list[LayerSpec]:
    return [
        LayerSpec("conv1", "conv", 2, 32),
        LayerSpec("conv2", "conv", 32, 32, stride=2),
        LayerSpec("conv3", "conv", 32, 64, stride=2),
        LayerSpec("conv4", "conv", 64, 64),
        LayerSpec("conv5", "conv", 64, 1),
    ]


class DegradationGenerator:
    factor = 4

    def __init__(self, seed: int = 0, noise_std: float = 0.03, dtype=np.float32, params: ParamStore | None = None):
        self.noise_std = float(noise_std)
        self.layers = degradation_layers()
        self.params = params if params is not None else init_params(self.layers, seed, dtype)

    def noise(self, shape, rng) -> np.ndarray:
        if not isinstance(rng, np.random.Generator):
            rng = np.random.default_rng(rng)
        return rng.standard_normal(shape) * self.noise_std

    def latent(self, hr, rng=0) -> Tensor:
        """Quarter-size degraded map before the upsampling tail."""
        hr = as_tensor(hr)
        _check_image(hr, self.factor, "degradation generator")
        n = Tensor(self.noise(hr.shape, rng).astype(hr.dtype))
        p = self.params
        h = concat([hr, n], axis=1)
        for name, stride in (("conv1", 1), ("conv2", 2), ("conv3", 2), ("conv4", 1)):
            h = conv(p, name, h, stride=stride).relu()
        return conv(p, "conv5", h)

    def __call__(self, hr, rng=0) -> Tensor:
        return ops.resize_bilinear(self.latent(hr, rng), self.factor)


def discriminator_layers() -> list[LayerSpec]:
    layers = [LayerSpec("input", "conv", 2, 64)]
    cin = 64
    for i, width in enumerate((64, 64, 128, 128), start=1):
        layers.append(LayerSpec(f"block{i}.conv", "conv", cin, width, stride=2))
        layers.append(LayerSpec(f"block{i}.bn", "bn", width, width))
        cin = width
    layers.append(LayerSpec("head", "conv", cin, 1))
    return layers


class PatchDiscriminator:
    """Conditional patch discriminator; 64x64 inputs give a 4x4 map."""

    def __init__(self, seed: int = 0, dtype=np.float32, params: ParamStore | None = None):
        self.layers = discriminator_layers()
        self.params = params if params is not None else init_params(self.layers, seed, dtype)
        self.training = True

    def train(self, flag: bool = True) -> "PatchDiscriminator":
        self.training = flag
        return self

    def __call__(self, candidate, label, update_stats: bool = True) -> Tensor:
        """Patch probabilities; ``update_stats=False`` keeps BN running buffers fixed."""
        candidate, label = as_tensor(candidate), as_tensor(label)
        _check_image(candidate, 16, "discriminator")
        if label.shape != candidate.shape:
            raise ShapeError(f"discriminator: label {label.shape} != candidate {candidate.shape}")
        if min(candidate.shape[-2:]) < 32:
            raise ShapeError("discriminator: inputs must be at least 32x32")
        p = self.params
        h = conv(p, "input", concat([candidate, label], axis=1)).relu()
        for i in range(1, 5):
            h = conv(p, f"block{i}.conv", h, stride=2).relu()
            h = bn(p, f"block{i}.bn", h, self.training, update_stats)
        return conv(p, "head", h).sigmoid()


def feature_layers() -> list[LayerSpec]:
    chans = (1, 16, 32, 32, 64, 64)
    strides = (1, 2, 1, 2, 1)
    return [
        LayerSpec(f"conv{i + 1}", "conv", chans[i], chans[i + 1], stride=s, trainable=False)
        for i, s in enumerate(strides)
    ]


class FeatureExtractor:
    """Frozen feature map phi(image) for the perceptual loss.

    The default weights are a fixed seeded random conv stack.  Weights stored
    in a checkpoint (names ``conv1.weight`` ... optionally behind a ``phi.``
    prefix) can replace them.
    """

    _strides = (1, 2, 1, 2, 1)

    def __init__(self, seed: int = FEATURE_SEED, dtype=np.float32, params: ParamStore | None = None):
        self.layers = feature_layers()
        if params is None:
            params = init_params(self.layers, seed, dtype)
        self.params = params
        for name in params:
            params.param(name).trainable = False
            params[name].requires_grad = False

    @classmethod
    def from_checkpoint(cls, path, dtype=np.float32) -> "FeatureExtractor":
        store = load_checkpoint(path)
        if any(n.startswith("phi.") for n in store):
            store = store.subset("phi")
        expected = {f"{s.name}.{suffix}" for s in feature_layers() for suffix in ("weight", "bias")}
        missing = expected - set(store)
        if missing:
            raise KeyError(f"{path}: missing feature weights {sorted(missing)}")
        store.astype(dtype)
        return cls(params=store)

    def __call__(self, image) -> Tensor:
        image = as_tensor(image)
        _check_image(image, 4, "feature extractor")
        h = image
        for i, s in enumerate(self._strides, start=1):
            h = conv(self.params, f"conv{i}", h, stride=s).relu()
        return h
