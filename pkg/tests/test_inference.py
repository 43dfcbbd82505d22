from fractions import Fraction

import numpy as np
import pytest

from selfsr.inference import back_project, pad_to_multiple, self_ensemble
from selfsr.resample import resample_bicubic
from selfsr.sampler import DIHEDRAL, apply_dihedral
from selfsr.tensor import ShapeError, Tensor


class Identity:
    multiple = 8

    def __call__(self, x):
        return x


class Recorder:
    """Returns a fixed per-call offset so ensemble members differ."""

    multiple = 8

    def __init__(self, offsets):
        self.offsets = list(offsets)
        self.calls = 0

    def __call__(self, x):
        off = self.offsets[self.calls]
        self.calls += 1
        return Tensor(x.numpy() + off)


def test_identity_ensemble_exact():
    img = np.random.default_rng(0).random((16, 24))
    assert np.array_equal(self_ensemble(Identity(), img), img)


def test_ensemble_median_bounds_and_symmetry():
    img = np.random.default_rng(1).random((16, 16))
    offs = np.random.default_rng(2).standard_normal(8) * 0.1
    a = self_ensemble(Recorder(offs), img)
    b = self_ensemble(Recorder(offs[::-1]), img)
    np.testing.assert_allclose(a, b, atol=1e-6)
    np.testing.assert_allclose(a, img + np.median(offs), atol=1e-6)
    assert np.all(a >= img + offs.min() - 1e-6) and np.all(a <= img + offs.max() + 1e-6)


def test_ensemble_members_see_transformed_canvas():
    img = np.arange(64.0).reshape(8, 8)
    seen = []

    class Spy(Identity):
        def __call__(self, x):
            seen.append(x.numpy()[0, 0].copy())
            return x

    self_ensemble(Spy(), img)
    for got, (rot, flip) in zip(seen, DIHEDRAL):
        assert np.array_equal(got, apply_dihedral(img, rot, flip))


def test_ensemble_rejects_indivisible():
    with pytest.raises(ShapeError):
        self_ensemble(Identity(), np.zeros((12, 16)))


def test_back_project_fixed_point():
    lr = np.random.default_rng(3).random((8, 8)) * 0.5 + 0.25
    sr = np.random.default_rng(4).random((32, 32)) * 0.5 + 0.25
    sr_fixed = back_project(sr, resample_bicubic(sr, Fraction(1, 4)), iters=5)
    np.testing.assert_allclose(sr_fixed, sr, atol=1e-12)
    assert np.array_equal(back_project(sr, lr, iters=0), sr)


def test_back_project_residual_non_increasing():
    rng = np.random.default_rng(5)
    gt = np.clip(resample_bicubic(rng.random((16, 16)), 4), 0, 1)
    lr = np.clip(resample_bicubic(gt, Fraction(1, 4)), 0, 1)
    sr = np.clip(gt + 0.1 * rng.standard_normal(gt.shape), 0, 1)
    down = Fraction(1, 4)
    res = [np.abs(lr - resample_bicubic(sr, down)).sum()]
    for k in range(1, 11):
        # the clamp in back_project happens at the end; check the unclamped iterates
        sr = sr + resample_bicubic(lr - resample_bicubic(sr, down), 4)
        res.append(np.abs(lr - resample_bicubic(sr, down)).sum())
    assert all(b <= a + 1e-12 for a, b in zip(res, res[1:]))
    final = back_project(np.clip(gt + 0.1 * rng.standard_normal(gt.shape), 0, 1), lr, 10)
    assert 0.0 <= final.min() and final.max() <= 1.0


def test_back_project_reduces_l1_of_consistency():
    rng = np.random.default_rng(6)
    lr = rng.random((10, 12)) * 0.6 + 0.2
    sr = np.clip(resample_bicubic(lr, 4) + 0.05 * rng.standard_normal((40, 48)), 0, 1)
    before = np.abs(resample_bicubic(sr, Fraction(1, 4)) - lr).sum()
    after = np.abs(resample_bicubic(back_project(sr, lr, 10), Fraction(1, 4)) - lr).sum()
    assert after <= before


def test_back_project_shape_check():
    with pytest.raises(ShapeError):
        back_project(np.zeros((30, 32)), np.zeros((8, 8)))


def test_pad_to_multiple():
    img = np.random.default_rng(7).random((13, 18))
    padded, (h, w) = pad_to_multiple(img, 8)
    assert padded.shape == (16, 24) and (h, w) == (13, 18)
    assert np.array_equal(padded[:13, :18], img)
