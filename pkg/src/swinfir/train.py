"""Training loop, top-k checkpoint retention and Y-channel evaluation."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import checkpoint as ckpt_io
from . import tensor as T
from .checkpoint import Checkpoint
from .config import RunConfig
from .data import ImagePair, atomic_write_bytes, ingest
from .ensemble import CountingPredictor, self_ensemble
from .errors import ConfigError, NumericError
from .metrics import MetricReport, bicubic_upscale, psnr_ssim_y
from .model import SwinFIR, build
from .trainops import AdamState, adam_step, augment, charbonnier_loss, crop_pair, lr_at

log = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------
def quantize(img: np.ndarray) -> np.ndarray:
    """Round to the 8-bit grid, as if the SR output were saved as a PNG."""
    return np.round(np.clip(img, 0.0, 1.0) * 255.0) / 255.0


def evaluate_pairs(predict: Callable[[np.ndarray], np.ndarray], pairs: Sequence[ImagePair], scale: int,
                   use_self_ensemble: bool = False, label: str = "") -> MetricReport:
    """Score ``predict`` (N x 3 x h x w -> N x 3 x sh x sw) on ``pairs``; border crop = ``scale``."""
    counter = CountingPredictor(predict)
    report = MetricReport(border=scale, label=label)
    for pair in pairs:
        lr = pair.lr[None]
        sr = self_ensemble(counter, lr) if use_self_ensemble else counter(lr)
        p, s = psnr_ssim_y(quantize(np.asarray(sr)[0]), pair.hr, scale)
        report.add(pair.id, p, s)
    report.forward_passes = counter.calls
    return report


def evaluate_model(model: SwinFIR, pairs: Sequence[ImagePair], use_self_ensemble: bool = False,
                   label: str = "") -> MetricReport:
    return evaluate_pairs(model.predict, pairs, model.config.scale, use_self_ensemble, label)


def evaluate_bicubic(pairs: Sequence[ImagePair], scale: int) -> MetricReport:
    """The bicubic baseline, scored by exactly the same pipeline as a model."""
    return evaluate_pairs(lambda lr: bicubic_upscale(lr, scale), pairs, scale, label="bicubic")


def evaluate(checkpoint: Checkpoint, dataset_dir, scale: int, use_self_ensemble: bool = False) -> MetricReport:
    if int(checkpoint.config.get("scale", -1)) != scale:
        raise ConfigError(f"checkpoint was trained for x{checkpoint.config.get('scale')}, not x{scale}")
    model = checkpoint.to_model()
    pairs = ingest(dataset_dir, scale)
    label = f"x{scale}" + (" self-ensemble" if use_self_ensemble else "")
    return evaluate_model(model, pairs, use_self_ensemble, label)


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------
def select_top_k(history: Sequence[tuple[int, float]], k: int) -> list[int]:
    """Iterations of the ``k`` best ``(iteration, val_psnr)`` entries; ties go to the later iteration."""
    ranked = sorted(history, key=lambda e: (e[1], e[0]), reverse=True)
    return sorted(it for it, _ in ranked[:k])


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    losses: list = field(default_factory=list)  # (iteration, loss, lr)
    val: list = field(default_factory=list)  # (iteration, psnr, ssim)
    retained: list = field(default_factory=list)  # checkpoint paths, best first
    bicubic_psnr: float = math.nan


def _batch(pairs, run: RunConfig, rng: np.random.Generator, dtype):
    lrs, hrs = [], []
    for _ in range(run.batch_size):
        i, j = rng.integers(0, len(pairs), 2)
        a = crop_pair(pairs[i], run.lr_patch, rng)
        b = crop_pair(pairs[j], run.lr_patch, rng)
        out = augment(a, b, run.augment, rng)
        lrs.append(out.lr)
        hrs.append(out.hr)
    return np.stack(lrs).astype(dtype), np.stack(hrs).astype(dtype)


def _ckpt_name(it: int) -> str:
    return f"iter_{it:07d}.ckpt"


def train(run: RunConfig, train_pairs: Sequence[ImagePair] | None = None,
          val_pairs: Sequence[ImagePair] | None = None, write: bool = True) -> TrainResult:
    """Run the full loop. Pairs are ingested from ``run.data`` unless given directly.

    Every ``eval_every`` iterations (and at the end) the model is scored on the
    validation pairs and checkpointed; only the ``keep_top_k`` best by PSNR stay
    on disk. ``loss.log`` gets one line per iteration.
    """
    scale = run.model.scale
    dtype = np.dtype(run.dtype)
    if train_pairs is None:
        train_pairs = ingest(run.data.train_dir, scale, run.data.synth_lr)
    if val_pairs is None:
        val_pairs = ingest(run.data.val_dir, scale, run.data.synth_lr)
    if not train_pairs:
        raise ConfigError("no training images")
    out_dir = Path(run.out_dir)
    ckpt_dir = out_dir / "checkpoints"
    if write:
        ckpt_dir.mkdir(parents=True, exist_ok=True)

    model = build(run.model, seed=run.seed, dtype=dtype)
    params = model.parameters()
    adam = AdamState.zeros_like(params)
    rng = np.random.default_rng([run.seed, 1])
    sched = run.schedule
    result = TrainResult(checkpoint=None)
    if val_pairs:
        result.bicubic_psnr = evaluate_bicubic(val_pairs, scale).mean_psnr
    history: list[tuple[int, float]] = []
    paths: dict[int, Path] = {}
    loss_lines = []

    for it in range(1, sched.total_iters + 1):
        lr_img, hr_img = _batch(train_pairs, run, rng, dtype)
        model.zero_grad()
        try:
            # overflow surfaces as NumericError from the tape, so numpy's own warnings would be noise
            with np.errstate(over="ignore", invalid="ignore"):
                pred = model(lr_img)
                loss = charbonnier_loss(pred, hr_img, run.loss.epsilon)
                T.backward(loss)
        except NumericError as exc:
            raise NumericError(f"non-finite value at iteration {it}: {exc}") from exc
        value = loss.item()
        if not math.isfinite(value):
            raise NumericError(f"loss is {value} at iteration {it}")
        step_lr = lr_at(it - 1, sched)
        adam_step(params, [p.grad for p in params], adam, step_lr, sched.beta1, sched.beta2, sched.weight_decay)
        result.losses.append((it, value, step_lr))
        loss_lines.append(f"{it} {value!r} {step_lr!r}")

        if val_pairs and (it % run.eval_every == 0 or it == sched.total_iters):
            rep = evaluate_model(model, val_pairs)
            result.val.append((it, rep.mean_psnr, rep.mean_ssim))
            log.info("iter %d  loss %.5f  val %.3f dB (bicubic %.3f)", it, value, rep.mean_psnr, result.bicubic_psnr)
            history.append((it, rep.mean_psnr))
            keep = set(select_top_k(history, run.keep_top_k))
            if write and it in keep:
                ck = Checkpoint.from_model(model, it, adam, meta={"val_psnr": rep.mean_psnr})
                paths[it] = ckpt_io.save(ckpt_dir / _ckpt_name(it), ck)
            for old in [i for i in paths if i not in keep]:
                paths.pop(old).unlink(missing_ok=True)

    result.checkpoint = Checkpoint.from_model(model, sched.total_iters, adam)
    ranked = sorted(history, key=lambda e: (e[1], e[0]), reverse=True)
    result.retained = [paths[i] for i, _ in ranked if i in paths]
    if write:
        ckpt_io.save(out_dir / "last.ckpt", result.checkpoint)
        atomic_write_bytes(out_dir / "loss.log", ("\n".join(loss_lines) + "\n").encode())
        val_text = "".join(f"{i} {p!r} {s!r}\n" for i, p, s in result.val)
        atomic_write_bytes(out_dir / "val.log", f"# bicubic {result.bicubic_psnr!r}\n{val_text}".encode())
    return result

