"""Command-line entry point: ``selfsr {sr,eval,baseline,degrade,gradcheck}``."""

from __future__ import annotations

import argparse
import csv
import logging
import math
import sys
from fractions import Fraction
from pathlib import Path

import numpy as np

from .config import VARIANTS, RunConfig
from .images import load_image, save_image
from .metrics import psnr, ssim

log = logging.getLogger("selfsr")


def _fmt_db(v: float) -> str:
    return "inf" if math.isinf(v) else f"{v:.4f}"


def _write_kv_csv(path: Path, rows: dict) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["metric", "value"])
        for k, v in rows.items():
            wr.writerow([k, v if not isinstance(v, float) else repr(v)])


def _hr_to_lr(gt: np.ndarray, s: int) -> tuple[np.ndarray, np.ndarray]:
    """Crop ``gt`` to a multiple of ``s`` and bicubically shrink it."""
    from .resample import resample_bicubic

    h, w = gt.shape
    gt = gt[: h - h % s, : w - w % s]
    return gt, np.clip(resample_bicubic(gt, Fraction(1, s)), 0.0, 1.0)


def cmd_sr(args) -> int:
    from .inference import super_resolve
    from .nn import save_checkpoint
    from .resample import resample_bicubic
    from .trainer import write_loss_csv

    overrides = {"seed": args.seed, "variant": args.variant, "step_cap": args.steps}
    cfg = RunConfig.load(args.config, **overrides) if args.config else RunConfig(**{k: v for k, v in overrides.items() if v is not None})
    if args.out:
        cfg = cfg.replace(out=args.out)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    cfg.save(out / "config.txt")

    image = load_image(args.input)

    def progress(entry):
        if entry.step % 100 == 0:
            log.info("step %d lr %g pixel %.4f total %.4f", entry.step, entry.lr, entry.report.pixel, entry.report.total)

    result = super_resolve(image, cfg, progress=progress)
    save_image(result.image, out / "sr.png")
    write_loss_csv(result.fit.log, out / "loss.csv")
    save_checkpoint(result.fit.models.checkpoint_store(), out / "checkpoint.ssr")

    rows = dict(result.stats)
    if args.gt:
        gt = load_image(args.gt)
        if gt.shape != result.image.shape:
            raise ValueError(f"ground truth {gt.shape} does not match SR output {result.image.shape}")
        bic = np.clip(resample_bicubic(image, cfg.scale), 0.0, 1.0)
        rows.update(
            psnr=psnr(result.image, gt),
            ssim=ssim(result.image, gt),
            psnr_bicubic=psnr(bic, gt),
            ssim_bicubic=ssim(bic, gt),
        )
        print(f"PSNR {_fmt_db(rows['psnr'])} dB  SSIM {rows['ssim']:.4f}  (bicubic {_fmt_db(rows['psnr_bicubic'])} dB)")
    _write_kv_csv(out / "metrics.csv", rows)
    print(f"wrote {out / 'sr.png'} ({result.image.shape[0]}x{result.image.shape[1]}, {result.stats['steps']} steps)")
    return 0


def cmd_eval(args) -> int:
    a, b = load_image(args.sr), load_image(args.gt)
    p, s = psnr(a, b), ssim(a, b)
    print(f"PSNR {_fmt_db(p)}")
    print(f"SSIM {s:.6f}")
    csv_path = Path(args.csv) if args.csv else Path(args.sr).with_name(Path(args.sr).stem + "_metrics.csv")
    _write_kv_csv(csv_path, {"psnr": p, "ssim": s})
    return 0


def cmd_baseline(args) -> int:
    from .resample import resample_bicubic

    s = args.scale
    image = load_image(args.input)
    gt = None
    if args.hr:
        gt, image = _hr_to_lr(image, s)
    up = np.clip(resample_bicubic(image, s), 0.0, 1.0)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_image(up, out / "baseline.png")
    msg = f"wrote {out / 'baseline.png'} ({up.shape[0]}x{up.shape[1]})"
    if gt is not None:
        p, q = psnr(up, gt), ssim(up, gt)
        _write_kv_csv(out / "metrics.csv", {"psnr": p, "ssim": q})
        msg += f"  PSNR {_fmt_db(p)} dB  SSIM {q:.4f}"
    print(msg)
    return 0


def cmd_degrade(args) -> int:
    from .inference import pad_to_multiple
    from .models import DegradationGenerator
    from .nn import load_checkpoint
    from .tensor import Tensor, no_grad

    store = load_checkpoint(args.checkpoint)
    if any(n.startswith("F.") for n in store):
        store = store.subset("F")
    F = DegradationGenerator(noise_std=args.noise_std, params=store)
    image = load_image(args.input)
    padded, (h, w) = pad_to_multiple(image, F.factor)
    with no_grad():
        lr = F(Tensor(padded.astype(np.float32)[None, None]), args.seed).data[0, 0, :h, :w]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_image(np.clip(lr, 0.0, 1.0), out / "degraded.png")
    print(f"wrote {out / 'degraded.png'}")
    return 0


def cmd_gradcheck(args) -> int:
    from .gradcheck import run_suite

    results = run_suite(instances=args.instances, seed=args.seed)
    ok = True
    for r in results:
        ok &= r.passed
        print(f"{'PASS' if r.passed else 'FAIL'}  {r.name:<20s} max rel err {r.max_rel_err:.3e} (tol {r.tol:g}, {r.instances} instances)")
    return 0 if ok else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="selfsr", description="Single-image x4 super-resolution trained on the image itself.")
    p.add_argument("-v", "--verbose", action="store_true", help="log training progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    sr = sub.add_parser("sr", help="train on an image and super-resolve it")
    sr.add_argument("input")
    sr.add_argument("--config", help="key = value run configuration")
    sr.add_argument("--seed", type=int)
    sr.add_argument("--out", help="artifact directory (default from config)")
    sr.add_argument("--variant", choices=VARIANTS)
    sr.add_argument("--steps", type=int, help="override the step cap")
    sr.add_argument("--gt", help="ground-truth HR image to score against")
    sr.set_defaults(func=cmd_sr)

    ev = sub.add_parser("eval", help="PSNR/SSIM of an image against ground truth")
    ev.add_argument("sr")
    ev.add_argument("gt")
    ev.add_argument("--csv", help="metrics CSV path (default: next to the SR image)")
    ev.set_defaults(func=cmd_eval)

    bl = sub.add_parser("baseline", help="bicubic upscaling")
    bl.add_argument("input")
    bl.add_argument("--scale", type=int, default=4)
    bl.add_argument("--out", default="out")
    bl.add_argument("--hr", action="store_true", help="input is ground truth: shrink it first and score the result")
    bl.set_defaults(func=cmd_baseline)

    dg = sub.add_parser("degrade", help="apply a trained HR->LR generator")
    dg.add_argument("input")
    dg.add_argument("--checkpoint", required=True)
    dg.add_argument("--seed", type=int, default=0)
    dg.add_argument("--noise-std", type=float, default=0.03)
    dg.add_argument("--out", default="out")
    dg.set_defaults(func=cmd_degrade)

    gc = sub.add_parser("gradcheck", help="finite-difference check of every op and loss")
    gc.add_argument("--instances", type=int, default=20)
    gc.add_argument("--seed", type=int, default=0)
    gc.set_defaults(func=cmd_gradcheck)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except Exception as exc:
        print(f"selfsr: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
