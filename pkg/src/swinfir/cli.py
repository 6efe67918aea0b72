"""Command-line entry point: ``swinfir <command> ...``.

Errors go to standard error as ``<CODE>: <message>``. Exit codes: 0 success,
1 usage or configuration, 2 data (unreadable images, bad checkpoints),
3 numeric failure (NaN loss, failed gradient check).
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from .errors import DataError, SwinFIRError, UsageError

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    """argparse with the package's usage exit code and error prefix."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{UsageError.code}: {message}\n")


def _weights(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"weights must be comma-separated numbers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="swinfir", description="SwinFIR super-resolution: train, evaluate, ensemble, check.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    t = sub.add_parser("train", help="train a model from a run file")
    t.add_argument("--config", required=True, type=Path)

    e = sub.add_parser("eval", help="Y-channel PSNR/SSIM of a checkpoint on a directory of HR images")
    e.add_argument("--ckpt", required=True, type=Path)
    e.add_argument("--data", required=True, type=Path)
    e.add_argument("--scale", required=True, type=int, choices=(2, 3, 4))
    e.add_argument("--self-ensemble", action="store_true", help="average over the 8 flips/rotations")
    e.add_argument("--report", type=Path, help="write the table here and per-image CSV next to it")

    n = sub.add_parser("ensemble", help="average the parameters of several checkpoints")
    n.add_argument("--out", required=True, type=Path)
    n.add_argument("--weights", type=_weights, help="comma-separated, non-negative, summing to 1")
    n.add_argument("ckpts", nargs="+", type=Path)

    c = sub.add_parser("params", help="print the parameter count of a model config")
    c.add_argument("--config", required=True, type=Path)

    g = sub.add_parser("grad-check", help="finite-difference check of every block (3 seeds)")
    g.add_argument("--seed", type=int, default=0, help="first of three consecutive seeds")

    a = sub.add_parser("augment-preview", help="write augmented training crops as PNGs")
    a.add_argument("--config", required=True, type=Path)
    a.add_argument("--out", required=True, type=Path)
    a.add_argument("--count", type=int, default=8)
    return p


def _cmd_train(args) -> int:
    from .config import load_run_config
    from .train import train

    run = load_run_config(args.config)
    result = train(run)
    print(f"iterations {run.schedule.total_iters}  final loss {result.losses[-1][1]:.6f}")
    if result.val:
        it, p, s = result.val[-1]
        print(f"val PSNR {p:.4f} dB  SSIM {s:.4f}  (bicubic {result.bicubic_psnr:.4f} dB)")
    for path in result.retained:
        print(f"kept {path}")
    print(f"last {Path(run.out_dir) / 'last.ckpt'}")
    return EXIT_OK


def _cmd_eval(args) -> int:
    from . import checkpoint
    from .data import atomic_write_bytes
    from .train import evaluate

    report = evaluate(checkpoint.load(args.ckpt), args.data, args.scale, args.self_ensemble)
    if not report.rows:
        raise DataError(f"no images to evaluate in {args.data}")
    text = report.to_text()
    sys.stdout.write(text)
    if args.report:
        atomic_write_bytes(args.report, text.encode("utf-8"))
        atomic_write_bytes(args.report.with_suffix(".csv"), report.to_csv().encode("utf-8"))
    return EXIT_OK


def _cmd_ensemble(args) -> int:
    from . import checkpoint
    from .ensemble import feature_ensemble

    members = [checkpoint.load(p) for p in args.ckpts]
    try:
        merged = feature_ensemble(members, args.weights)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    checkpoint.save(args.out, merged)
    print(f"wrote {args.out} ({len(members)} members)")
    return EXIT_OK


def _cmd_params(args) -> int:
    from .config import load_model_config
    from .model import build, count_params

    model = build(load_model_config(args.config))
    print(f"params {count_params(model, exclude_position_bias=True)}")
    print(f"params_with_position_bias {count_params(model)}")
    return EXIT_OK


def _cmd_grad_check(args) -> int:
    from .gradcheck import TOL, run_suite

    def show(r):
        flag = "ok  " if r.passed else "FAIL"
        print(f"{flag} {r.name:<17} seed {r.seed}  rel err {r.error:.2e}  ({r.worst}, {r.coords} coords,"
              f" {r.seconds:.1f}s)", flush=True)

    results = run_suite(seeds=(args.seed, args.seed + 1, args.seed + 2), report=show)
    failed = [r for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} passed (tolerance {TOL:g})")
    if failed:
        print(f"E-GRADCHECK: {len(failed)} case(s) above tolerance", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


def _cmd_augment_preview(args) -> int:
    from .config import load_run_config
    from .data import ingest, write_image
    from .trainops import augment, crop_pair

    run = load_run_config(args.config)
    pairs = ingest(run.data.train_dir, run.model.scale, run.data.synth_lr)
    if not pairs:
        raise DataError(f"no training images in {run.data.train_dir}")
    rng = np.random.default_rng([run.seed, 2])
    args.out.mkdir(parents=True, exist_ok=True)
    for k in range(args.count):
        i, j = rng.integers(0, len(pairs), 2)
        a = crop_pair(pairs[i], run.lr_patch, rng)
        b = crop_pair(pairs[j], run.lr_patch, rng)
        out = augment(a, b, run.augment, rng)
        write_image(args.out / f"sample_{k:02d}_lr.png", out.lr)
        write_image(args.out / f"sample_{k:02d}_hr.png", out.hr)
    print(f"wrote {args.count} LR/HR pairs to {args.out}")
    return EXIT_OK


COMMANDS = {
    "train": _cmd_train,
    "eval": _cmd_eval,
    "ensemble": _cmd_ensemble,
    "params": _cmd_params,
    "grad-check": _cmd_grad_check,
    "augment-preview": _cmd_augment_preview,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except SwinFIRError as exc:
        print(f"{exc.code}: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"E-IO: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
