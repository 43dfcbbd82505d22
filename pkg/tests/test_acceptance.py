"""Acceptance suite: one verdict line per criterion (see the summary section)."""

import csv
import math
import os
import subprocess
import sys
import time
from fractions import Fraction
from pathlib import Path

import numpy as np
import pytest

from selfsr.gradcheck import run_suite
from selfsr.images import blob_image, load_image, save_image
from selfsr.losses import LossTerms, LossWeights, adversarial_loss_g, cycle_loss, discriminator_loss, pixel_loss, total_loss
from selfsr.metrics import psnr, ssim
from selfsr.models import DegradationGenerator, MultiScaleGenerator
from selfsr.nn import load_checkpoint
from selfsr.ops import conv2d, conv2d_transpose
from selfsr.resample import resample_bicubic
from selfsr.tensor import Tensor, no_grad
from selfsr.trainer import CycleModels

ROOT = Path(__file__).resolve().parent


def selfsr(*argv, **kw):
    return subprocess.run([sys.executable, "-m", "selfsr.cli", *map(str, argv)], capture_output=True, text=True, **kw)


def low_band_fraction(a: np.ndarray, cutoff: float = 0.125) -> float:
    p = np.abs(np.fft.fft2(a)) ** 2
    fy = np.abs(np.fft.fftfreq(a.shape[0]))[:, None]
    fx = np.abs(np.fft.fftfreq(a.shape[1]))[None, :]
    return float(p[(fy < cutoff) & (fx < cutoff)].sum() / p.sum())


@pytest.fixture(scope="module")
def blob_pair(tmp_path_factory):
    """128x128 ground truth and its bicubic /4 input, stored as 16-bit PNG."""
    d = tmp_path_factory.mktemp("blob")
    gt = blob_image(128, seed=0)
    lr = np.clip(resample_bicubic(gt, Fraction(1, 4)), 0, 1)
    save_image(gt, d / "gt.png", bits=16)
    save_image(lr, d / "lr.png", bits=16)
    return d / "gt.png", d / "lr.png"


# 1 -------------------------------------------------------------------------


def test_c01_gradient_suite(acceptance):
    t0 = time.perf_counter()
    results = run_suite(instances=20, tol=1e-4)
    secs = time.perf_counter() - t0
    bad = [r.name for r in results if not r.passed]
    worst = max(r.max_rel_err for r in results)
    ok = not bad and secs <= 120 and all(r.instances >= 20 for r in results)
    acceptance(1, ok, f"{len(results)} ops/losses, worst rel err {worst:.1e}, {secs:.0f}s, failing={bad}")
    assert ok


# 2 -------------------------------------------------------------------------


def test_c02_adjoint_identity(acceptance):
    rng = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(50):
        b, ci, co = rng.integers(1, 3), rng.integers(1, 4), rng.integers(1, 4)
        k = int(rng.choice([1, 2, 3, 5]))
        stride = int(rng.integers(1, 4))
        pad = int(rng.integers(0, k // 2 + 1))
        h = int(rng.integers(k + 2, 14))
        x = rng.standard_normal((b, ci, h, h))
        wt = rng.standard_normal((co, ci, k, k))
        fwd = conv2d(x, wt, stride=stride, pad=pad).numpy()
        y = rng.standard_normal(fwd.shape)
        op = h - ((fwd.shape[-1] - 1) * stride - 2 * pad + k)
        lhs = float(np.sum(fwd * y))
        # same array: (out, in, k, k) for the forward map is (in, out, k, k) for its adjoint
        xt = conv2d_transpose(y, wt, stride=stride, pad=pad, output_padding=op).numpy()
        assert xt.shape == x.shape
        rhs = float(np.sum(x * xt))
        worst = max(worst, abs(lhs - rhs) / max(abs(lhs), abs(rhs), 1e-300))
    ok = worst <= 1e-10
    acceptance(2, ok, f"50 combinations, worst rel err {worst:.1e}")
    assert ok


# 3 -------------------------------------------------------------------------


class _Half:
    def __call__(self, cand, cond):
        return Tensor(np.full((1, 1, 4, 4), 0.5))


def test_c03_loss_identities(acceptance):
    rng = np.random.default_rng(3)
    x, y = rng.random((1, 1, 64, 64)), rng.random((1, 1, 64, 64))
    ident = lambda t: t  # noqa: E731
    zero_pix = pixel_loss(ident(y), y, ident(x), x).item()
    zero_cyc = cycle_loss(x, ident(ident(x)), y, ident(ident(y))).item()

    vals = {n: float(v) for n, v in zip(("pixel", "perceptual", "adv_G", "adv_F", "cycle_LR", "cycle_HR"), rng.uniform(0.05, 3, 6))}
    w = LossWeights()
    t, rep = total_loss(w, LossTerms(**{n: Tensor(v) for n, v in vals.items()}))
    expect = (
        w.pixel * vals["pixel"]
        + w.perceptual * vals["perceptual"]
        + w.adversarial * (vals["adv_G"] + vals["adv_F"])
        + w.cycle * (vals["cycle_LR"] + vals["cycle_HR"])
    )
    rel = max(abs(t.item() - expect), abs(rep.total - expect)) / expect
    adv = adversarial_loss_g(_Half(), (x, x), _Half(), (y, y)).item()
    disc = discriminator_loss(_Half(), (y, x), (x, x)).item()
    ok = zero_pix == 0 and zero_cyc == 0 and rel <= 1e-6 and abs(adv - 2 * math.log(2)) <= 1e-6 and abs(disc - 2 * math.log(2)) <= 1e-6
    acceptance(3, ok, f"pixel={zero_pix} cycle={zero_cyc} total rel={rel:.1e} adv={adv:.7f} disc={disc:.7f}")
    assert ok


# 4 -------------------------------------------------------------------------


def test_c04_shape_cycle_law(acceptance):
    rng = np.random.default_rng(4)
    G, F = MultiScaleGenerator(seed=0), DegradationGenerator(seed=0)
    checked = 0
    problems = []
    with no_grad():
        for _ in range(8):
            h, w = (int(v) * 8 for v in rng.integers(8, 17, 2))
            x = rng.random((1, 1, h, w)).astype(np.float32)
            sr, lr = G(x), F(x, 0)
            lat = F.latent(x, 0)
            cyc_lr, cyc_hr = F(sr, 1), G(lr)
            if not (sr.shape == lr.shape == cyc_lr.shape == cyc_hr.shape == x.shape):
                problems.append((h, w))
            if lat.shape[-2:] != (h // 4, w // 4):
                problems.append(("latent", h, w))
            checked += 1
    ok = not problems
    acceptance(4, ok, f"{checked} random sizes in 64..128, problems={problems}")
    assert ok


# 5 -------------------------------------------------------------------------


def test_c05_cli_determinism(acceptance, blob_pair, tmp_path):
    _, lr = blob_pair
    outs = []
    for k in range(2):
        out = tmp_path / f"run{k}"
        r = selfsr("sr", lr, "--seed", 7, "--steps", 25, "--out", out)
        assert r.returncode == 0, r.stderr
        outs.append(out)
    same = {n: (outs[0] / n).read_bytes() == (outs[1] / n).read_bytes() for n in ("sr.png", "checkpoint.ssr", "loss.csv")}
    ok = all(same.values())
    acceptance(5, ok, f"byte-identical: {same}")
    assert ok


# 6 -------------------------------------------------------------------------


def _brute_ssim(a, b):
    t = np.arange(11) - 5.0
    g = np.exp(-t * t / 4.5)
    win = np.outer(g, g) / np.outer(g, g).sum()
    c1, c2 = 0.01**2, 0.03**2
    out = []
    for i in range(a.shape[0] - 10):
        for j in range(a.shape[1] - 10):
            pa, pb = a[i:i + 11, j:j + 11], b[i:i + 11, j:j + 11]
            ma, mb = (win * pa).sum(), (win * pb).sum()
            va, vb = (win * (pa - ma) ** 2).sum(), (win * (pb - mb) ** 2).sum()
            cv = (win * (pa - ma) * (pb - mb)).sum()
            out.append((2 * ma * mb + c1) * (2 * cv + c2) / ((ma**2 + mb**2 + c1) * (va + vb + c2)))
    return float(np.mean(out))


def test_c06_metric_oracles(acceptance):
    rng = np.random.default_rng(6)
    a = rng.random((64, 64))
    self_one = ssim(a, a) == 1.0
    p = psnr(np.full((16, 16), 0.25), np.full((16, 16), 0.25 + 1 / 255))
    worst = 0.0
    for _ in range(5):
        u = rng.random((64, 64))
        v = np.clip(u + rng.normal(0, rng.uniform(0.02, 0.3), u.shape), 0, 1)
        worst = max(worst, abs(ssim(u, v) - _brute_ssim(u, v)))
    ok = self_one and abs(p - 48.1308) <= 1e-3 and worst <= 1e-9
    acceptance(6, ok, f"ssim(a,a)==1: {self_one}, psnr(1/255)={p:.4f}, brute-force diff {worst:.1e}")
    assert ok


# 7 and 10 share one end-to-end run ----------------------------------------


@pytest.fixture(scope="module")
def smoke_run(blob_pair, tmp_path_factory):
    gt, lr = blob_pair
    out = tmp_path_factory.mktemp("smoke")
    t0 = time.perf_counter()
    r = selfsr("sr", lr, "--steps", 2000, "--out", out / "sr", "--gt", gt)
    base = selfsr("baseline", lr, "--scale", 4, "--out", out / "bicubic")
    secs = time.perf_counter() - t0
    assert r.returncode == 0, r.stderr
    assert base.returncode == 0, base.stderr
    return out, secs


def test_c07_end_to_end_smoke(acceptance, smoke_run, blob_pair):
    out, secs = smoke_run
    gt, _ = blob_pair
    rows = list(csv.DictReader(open(out / "sr" / "loss.csv")))
    pix = np.array([float(r["pixel"]) for r in rows])
    start, end = pix[:10].mean(), pix[-10:].mean()
    truth = load_image(gt)
    p_sr = psnr(load_image(out / "sr" / "sr.png"), truth)
    p_bic = psnr(load_image(out / "bicubic" / "baseline.png"), truth)
    a, b, c = end <= 0.5 * start, p_sr >= p_bic, secs <= 15 * 60
    acceptance(
        7,
        a and b and c,
        f"(a) pixel {start:.4f} -> {end:.4f} [{'ok' if a else 'no'}]; "
        f"(b) PSNR SR {p_sr:.3f} dB vs bicubic {p_bic:.3f} dB [{'ok' if b else 'no'}]; "
        f"(c) {secs / 60:.1f} min over {len(rows)} steps [{'ok' if c else 'no'}]",
    )
    assert a, f"pixel loss {end:.4f} > 50% of {start:.4f}"
    assert b, f"SR {p_sr:.3f} dB below bicubic {p_bic:.3f} dB"
    assert c


# 8 -------------------------------------------------------------------------

DATASET_ENV = "SELFSR_CCA_US_DIR"


def test_c08_bicubic_baseline_reproduction(acceptance, tmp_path):
    root = os.environ.get(DATASET_ENV)
    files = sorted(p for p in Path(root).rglob("*") if p.suffix.lower() in (".png", ".pgm")) if root else []
    if not files:
        acceptance(8, "SKIP", f"dataset not found (set {DATASET_ENV} to a directory of PNG/PGM images)")
        pytest.skip("CCA-US dataset not available")
    pick = np.random.default_rng(0).choice(len(files), size=min(10, len(files)), replace=False)
    scores = []
    for i in pick:
        out = tmp_path / str(i)
        r = selfsr("baseline", files[i], "--hr", "--scale", 4, "--out", out)
        assert r.returncode == 0, r.stderr
        rows = dict(csv.reader(open(out / "metrics.csv")))
        scores.append(float(rows["psnr"]))
    mean = float(np.mean(scores))
    ok = abs(mean - 26.300) <= 1.5
    acceptance(8, ok, f"mean bicubic PSNR over {len(scores)} images {mean:.3f} dB (target 26.300 +/- 1.5)")
    assert ok


# 9 -------------------------------------------------------------------------

ACTIVE = {
    "full": {"pixel", "perceptual", "adv_G", "adv_F", "cycle_LR", "cycle_HR"},
    "gan_alone": {"adv_G", "adv_F"},
    "cycle_alone": {"pixel", "perceptual", "cycle_LR", "cycle_HR"},
    "gan_fwd": {"adv_G", "adv_F", "cycle_LR"},
    "gan_bwd": {"adv_G", "adv_F", "cycle_HR"},
    "gan_cycle": {"adv_G", "adv_F", "cycle_LR", "cycle_HR"},
}


def test_c09_ablation_plumbing(acceptance, blob_pair, tmp_path):
    _, lr = blob_pair
    wrong = {}
    for variant, active in ACTIVE.items():
        out = tmp_path / variant
        r = selfsr("sr", lr, "--variant", variant, "--steps", 15, "--out", out)
        if r.returncode != 0:
            wrong[variant] = r.stderr.strip()
            continue
        rows = list(csv.DictReader(open(out / "loss.csv")))
        for name in ACTIVE["full"]:
            col = np.array([float(row[f"c_{name}"]) for row in rows])
            if (name in active) != bool(np.all(col > 0)) or (name not in active and np.any(col != 0)):
                wrong.setdefault(variant, []).append(name)
        if not (out / "sr.png").exists():
            wrong.setdefault(variant, []).append("no output")
    ok = not wrong
    acceptance(9, ok, f"{len(ACTIVE)} variants, mismatches={wrong}")
    assert ok


# 10 ------------------------------------------------------------------------


def test_c10_degradation_bandlimit(acceptance, smoke_run):
    out, _ = smoke_run
    noise = np.random.default_rng(10).random((1, 1, 128, 128)).astype(np.float32)
    fresh = CycleModels.create(int(np.random.SeedSequence(0).generate_state(3)[0])).F
    trained = DegradationGenerator(params=load_checkpoint(out / "sr" / "checkpoint.ssr").subset("F"))
    fracs = {}
    with no_grad():
        for name, F in (("initial", fresh), ("trained", trained)):
            fracs[name] = low_band_fraction(F(noise, 0).numpy()[0, 0])
    ok = all(v >= 0.9 for v in fracs.values())
    acceptance(10, ok, "energy below Nyquist/4: " + ", ".join(f"{k} F {v:.3f}" for k, v in fracs.items()))
    assert ok
