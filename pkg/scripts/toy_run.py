#!/usr/bin/env python3
"""Train the toy model on the seeded textures and compare it with bicubic upscaling.

Creates data/toy/ first if it is missing. Exit status is 0 when the trained
model beats bicubic by at least --margin dB mean Y-PSNR on the held-out set.
"""
import argparse
import logging
import sys
import time
from pathlib import Path

from swinfir.config import load_run_config
from swinfir.train import train

ROOT = Path(__file__).resolve().parents[1]
sys.path.insert(0, str(Path(__file__).resolve().parent))
import make_textures  # noqa: E402


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--config", type=Path, default=ROOT / "configs" / "toy.ini")
    ap.add_argument("--iters", type=int, help="override schedule.total_iters")
    ap.add_argument("--margin", type=float, default=0.3)
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    run = load_run_config(args.config, check_paths=False)
    if not Path(run.data.train_dir).is_dir():
        make_textures.main(["--out", str(Path(run.data.train_dir).parent)])
    if args.iters:
        run.schedule.total_iters = args.iters
        run.schedule.milestones = [m for m in run.schedule.milestones if m < args.iters]

    t0 = time.perf_counter()
    result = train(run)
    minutes = (time.perf_counter() - t0) / 60
    it, model_psnr, model_ssim = result.val[-1]
    gain = model_psnr - result.bicubic_psnr
    print(f"iterations {it}  time {minutes:.1f} min")
    print(f"bicubic {result.bicubic_psnr:.3f} dB  model {model_psnr:.3f} dB (SSIM {model_ssim:.4f})  gain {gain:+.3f} dB")
    return 0 if gain >= args.margin else 1


if __name__ == "__main__":
    sys.exit(main())
