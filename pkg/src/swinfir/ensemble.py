"""Feature ensemble (weight averaging), self-ensemble and multi-model output ensemble."""
from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass, replace
from typing import Callable, Sequence

import numpy as np

from .checkpoint import Checkpoint
from .errors import CheckpointError, ShapeError

Predictor = Callable[[np.ndarray], np.ndarray]


@dataclass
class EnsembleConfig:
    weights: list | None = None

    def resolve(self, n: int) -> np.ndarray:
        if n < 1:
            raise ValueError("need at least one member")
        if self.weights is None:
            return np.full(n, 1.0 / n)
        w = np.asarray(self.weights, dtype=np.float64)
        if w.shape != (n,):
            raise ValueError(f"{w.size} weights for {n} members")
        if (w < 0).any() or abs(w.sum() - 1.0) > 1e-12:
            raise ValueError("ensemble weights must be non-negative and sum to 1")
        return w


def feature_ensemble(checkpoints: Sequence[Checkpoint], weights=None) -> Checkpoint:
    """Weighted average of parameter arrays, name by name. Manifests must match exactly."""
    checkpoints = list(checkpoints)
    w = EnsembleConfig(None if weights is None else list(weights)).resolve(len(checkpoints))
    ref = checkpoints[0]
    for c in checkpoints[1:]:
        if c.manifest() != ref.manifest():
            raise CheckpointError("feature ensemble needs identical parameter manifests")
        if c.config != ref.config:
            raise CheckpointError("feature ensemble needs identical model configs")
    params = OrderedDict()
    for name, arr in ref.params.items():
        acc = np.zeros(arr.shape, dtype=np.float64)
        for wi, c in zip(w, checkpoints):
            acc += wi * c.params[name].astype(np.float64)
        params[name] = acc.astype(arr.dtype)
    meta = {"feature_ensemble": {"members": len(checkpoints), "weights": [float(x) for x in w]}}
    return replace(ref, params=params, optimizer=OrderedDict(), optimizer_step=0,
                   iteration=max(c.iteration for c in checkpoints), meta=meta)


class CountingPredictor:
    """Wrap a predictor and count its forward passes."""

    def __init__(self, predict: Predictor):
        self.predict = predict
        self.calls = 0

    def __call__(self, x: np.ndarray) -> np.ndarray:
        self.calls += 1
        return self.predict(x)


# 8 dihedral transforms on the last two axes: k quarter turns, optionally after a horizontal flip
TRANSFORMS = tuple((k, f) for f in (False, True) for k in range(4))


def apply_transform(x: np.ndarray, k: int, flip: bool) -> np.ndarray:
    if flip:
        x = x[..., ::-1]
    return np.ascontiguousarray(np.rot90(x, k, axes=(-2, -1)))


def invert_transform(y: np.ndarray, k: int, flip: bool) -> np.ndarray:
    y = np.rot90(y, -k, axes=(-2, -1))
    if flip:
        y = y[..., ::-1]
    return np.ascontiguousarray(y)


def self_ensemble(predict: Predictor, lr: np.ndarray) -> np.ndarray:
    """Mean of ``t^-1(predict(t(lr)))`` over the 8 flip/rotation transforms (8 forward passes)."""
    acc = None
    for k, flip in TRANSFORMS:
        out = invert_transform(np.asarray(predict(apply_transform(lr, k, flip)), dtype=np.float64), k, flip)
        acc = out if acc is None else acc + out
    return acc / len(TRANSFORMS)


def multi_model_ensemble(predictors: Sequence[Predictor], lr: np.ndarray) -> np.ndarray:
    """Pixel-wise mean of the outputs of several models on the same input."""
    outs = [np.asarray(p(lr), dtype=np.float64) for p in predictors]
    if not outs:
        raise ValueError("need at least one model")
    if any(o.shape != outs[0].shape for o in outs):
        raise ShapeError("models disagree on output shape (scale mismatch?)")
    return np.mean(outs, axis=0)
