"""Loss, optimiser, learning-rate schedule, cropping and pixel-domain augmentation."""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import tensor as T
from .data import ImagePair
from .errors import ConfigError, DataError, ShapeError
from .tensor import Tensor


# ---------------------------------------------------------------------------
# loss
# ---------------------------------------------------------------------------
@dataclass
class LossConfig:
    epsilon: float = 1e-6

    def validate(self) -> None:
        if not self.epsilon > 0:
            raise ConfigError("loss epsilon must be positive")


def charbonnier_loss(pred: Tensor, target, eps: float = 1e-6) -> Tensor:
    """mean(sqrt((pred - target)^2 + eps)); smooth at zero residual."""
    target = T.as_tensor(target, pred.dtype)
    if pred.shape != target.shape:
        raise ShapeError(f"charbonnier: shapes {pred.shape} and {target.shape} differ")
    if not eps > 0:
        raise ValueError("eps must be positive")
    d = pred - target
    return T.mean(T.sqrt(d * d + eps))


# ---------------------------------------------------------------------------
# optimiser and schedule
# ---------------------------------------------------------------------------
@dataclass
class AdamState:
    m: list
    v: list
    t: int = 0

    @classmethod
    def zeros_like(cls, params) -> AdamState:
        return cls([np.zeros_like(p.data) for p in params], [np.zeros_like(p.data) for p in params])


def adam_step(params, grads, state: AdamState, lr: float, beta1: float = 0.9, beta2: float = 0.99,
              weight_decay: float = 0.0, eps: float = 1e-8) -> AdamState:
    """One bias-corrected Adam update, in place on ``params``; a missing grad counts as zero.

    Weight decay, when nonzero, is decoupled (applied directly to the weights).
    """
    if len(params) != len(state.m) or len(grads) != len(params):
        raise ShapeError("adam: params, grads and state have different lengths")
    state.t += 1
    bc1 = 1.0 - beta1 ** state.t
    bc2 = 1.0 - beta2 ** state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if m.shape != p.shape:
            raise ShapeError(f"adam: state shape {m.shape} != param shape {p.shape}")
        if g is None:
            g = np.zeros_like(p.data)
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        step = (m / bc1) / (np.sqrt(v / bc2) + eps)
        if weight_decay:
            p.data -= lr * weight_decay * p.data
        p.data -= (lr * step).astype(p.dtype)
    return state


@dataclass
class TrainSchedule:
    total_iters: int = 1_000_000
    lr0: float = 2e-4
    milestones: list = field(default_factory=lambda: [500_000, 800_000, 900_000, 950_000])
    decay: float = 0.5
    beta1: float = 0.9
    beta2: float = 0.99
    weight_decay: float = 0.0

    def validate(self) -> None:
        ms = list(self.milestones)
        if self.total_iters < 1:
            raise ConfigError("total_iters must be positive")
        if any(b <= a for a, b in zip(ms, ms[1:])):
            raise ConfigError("milestones must be strictly increasing")
        if ms and (ms[0] < 0 or ms[-1] >= self.total_iters):
            raise ConfigError("milestones must lie in [0, total_iters)")
        if self.lr0 < 0:
            raise ConfigError("lr0 must be non-negative")


def lr_at(it: int, schedule: TrainSchedule) -> float:
    """``lr0 * decay ** (number of milestones <= it)``."""
    passed = sum(1 for m in schedule.milestones if m <= it)
    return schedule.lr0 * schedule.decay ** passed


# ---------------------------------------------------------------------------
# cropping and augmentation (arrays are 3 x H x W, values in [0, 1])
# ---------------------------------------------------------------------------
def crop_pair(pair: ImagePair, lr_patch: int, rng: np.random.Generator) -> ImagePair:
    """Random aligned crop: ``lr_patch``^2 on LR, ``(scale*lr_patch)``^2 at the matching HR offset."""
    s = pair.scale
    _, h, w = pair.lr.shape
    if pair.hr.shape[1:] != (h * s, w * s):
        raise DataError(f"{pair.id}: HR {pair.hr.shape[1:]} is not {s}x LR {(h, w)}")
    if h < lr_patch or w < lr_patch:
        raise DataError(f"{pair.id}: LR {h}x{w} smaller than patch {lr_patch}")
    y = int(rng.integers(0, h - lr_patch + 1))
    x = int(rng.integers(0, w - lr_patch + 1))
    return crop_at(pair, y, x, lr_patch)


def crop_at(pair: ImagePair, y: int, x: int, lr_patch: int) -> ImagePair:
    s = pair.scale
    return replace(
        pair,
        lr=pair.lr[:, y:y + lr_patch, x:x + lr_patch],
        hr=pair.hr[:, s * y:s * (y + lr_patch), s * x:s * (x + lr_patch)],
    )


def geometric(pair: ImagePair, hflip: bool = False, vflip: bool = False, k_rot90: int = 0) -> ImagePair:
    """Apply hflip, then vflip, then ``k_rot90`` counter-clockwise quarter turns to LR and HR alike."""

    def f(a):
        if hflip:
            a = a[:, :, ::-1]
        if vflip:
            a = a[:, ::-1, :]
        if k_rot90 % 4:
            a = np.rot90(a, k_rot90, axes=(1, 2))
        return np.ascontiguousarray(a)

    return replace(pair, lr=f(pair.lr), hr=f(pair.hr))


def geometric_inverse(pair: ImagePair, hflip: bool = False, vflip: bool = False, k_rot90: int = 0) -> ImagePair:
    def f(a):
        if k_rot90 % 4:
            a = np.rot90(a, -k_rot90, axes=(1, 2))
        if vflip:
            a = a[:, ::-1, :]
        if hflip:
            a = a[:, :, ::-1]
        return np.ascontiguousarray(a)

    return replace(pair, lr=f(pair.lr), hr=f(pair.hr))


def channel_shuffle(pair: ImagePair, perm) -> ImagePair:
    perm = tuple(int(p) for p in perm)
    if sorted(perm) != [0, 1, 2]:
        raise ValueError(f"{perm} is not a permutation of (0, 1, 2)")
    idx = list(perm)
    return replace(pair, lr=pair.lr[idx].copy(), hr=pair.hr[idx].copy())


def _same_shapes(a: ImagePair, b: ImagePair) -> None:
    if a.lr.shape != b.lr.shape or a.hr.shape != b.hr.shape:
        raise ShapeError("pairs to be mixed must have equal LR and HR shapes")


def mixup(a: ImagePair, b: ImagePair, lam: float) -> ImagePair:
    """``lam * a + (1 - lam) * b`` on both LR and HR."""
    _same_shapes(a, b)
    if not 0.0 <= lam <= 1.0:
        raise ValueError("mixup weight must be in [0, 1]")
    return replace(a, lr=lam * a.lr + (1 - lam) * b.lr, hr=lam * a.hr + (1 - lam) * b.hr)


def blend(pair: ImagePair, color, lam: float, clip: bool = True) -> ImagePair:
    """Pull both images toward a constant RGB colour: ``lam * img + (1 - lam) * color``."""
    c = np.asarray(color, dtype=pair.lr.dtype).reshape(3, 1, 1)

    def f(a):
        out = lam * a + (1 - lam) * c
        return np.clip(out, 0.0, 1.0) if clip else out

    return replace(pair, lr=f(pair.lr), hr=f(pair.hr))


def _region_masks(a: ImagePair, region) -> tuple[np.ndarray, np.ndarray]:
    y0, x0, y1, x1 = (int(v) for v in region)
    _, h, w = a.lr.shape
    if not (0 <= y0 <= y1 <= h and 0 <= x0 <= x1 <= w):
        raise ValueError(f"region {region} outside LR extent {h}x{w}")
    s = a.scale
    mlr = np.zeros((1, h, w), dtype=bool)
    mlr[:, y0:y1, x0:x1] = True
    mhr = np.zeros((1, h * s, w * s), dtype=bool)
    mhr[:, s * y0:s * y1, s * x0:s * x1] = True
    return mlr, mhr


def cutmix(a: ImagePair, b: ImagePair, region) -> ImagePair:
    """Paste ``b`` into ``a`` inside the LR rectangle ``(y0, x0, y1, x1)`` and its HR image."""
    _same_shapes(a, b)
    mlr, mhr = _region_masks(a, region)
    return replace(a, lr=np.where(mlr, b.lr, a.lr), hr=np.where(mhr, b.hr, a.hr))


def cutmixup(a: ImagePair, b: ImagePair, region, lam: float) -> ImagePair:
    """Like :func:`cutmix` but the rectangle holds ``lam * a + (1 - lam) * b``."""
    _same_shapes(a, b)
    mixed = mixup(a, b, lam)
    mlr, mhr = _region_masks(a, region)
    return replace(a, lr=np.where(mlr, mixed.lr, a.lr), hr=np.where(mhr, mixed.hr, a.hr))


@dataclass
class AugmentConfig:
    hflip: float = 0.5
    vflip: float = 0.5
    rot90: float = 0.5
    channel_shuffle: float = 0.0
    mixup: float = 0.0
    blend: float = 0.0
    cutmix: float = 0.0
    cutmixup: float = 0.0
    mixup_alpha: float = 1.2
    cutmix_alpha: float = 1.2
    blend_min: float = 0.7
    cutmix_max_area: float = 0.25

    def validate(self) -> None:
        for name in ("hflip", "vflip", "rot90", "channel_shuffle", "mixup", "blend", "cutmix", "cutmixup"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ConfigError(f"augment probability {name}={p} not in [0, 1]")
        if self.mixup + self.blend + self.cutmix + self.cutmixup > 1.0 + 1e-12:
            raise ConfigError("pixel-domain augmentation probabilities must sum to at most 1")
        if self.mixup_alpha <= 0 or self.cutmix_alpha <= 0:
            raise ConfigError("Beta parameters must be positive")
        if not 0.0 <= self.blend_min <= 1.0 or not 0.0 < self.cutmix_max_area <= 1.0:
            raise ConfigError("blend_min must lie in [0, 1] and cutmix_max_area in (0, 1]")


def sample_region(h: int, w: int, rng: np.random.Generator, max_area: float = 0.25) -> tuple[int, int, int, int]:
    """LR rectangle with area fraction ~ Uniform(0, max_area); integer corners keep HR exact."""
    area = rng.uniform(0.0, max_area)
    aspect = math.exp(rng.uniform(math.log(0.5), math.log(2.0)))
    rh = min(h, int(round(math.sqrt(area * h * w * aspect))))
    rw = min(w, int(round(math.sqrt(area * h * w / aspect))))
    y0 = int(rng.integers(0, h - rh + 1))
    x0 = int(rng.integers(0, w - rw + 1))
    return y0, x0, y0 + rh, x0 + rw


def augment(pair: ImagePair, partner: ImagePair | None, cfg: AugmentConfig, rng: np.random.Generator) -> ImagePair:
    """Geometric ops, then channel shuffle, then at most one pixel-domain mixing op.

    ``partner`` is the second sample for the mixing ops; it is only used when one is drawn.
    All randomness comes from ``rng``, so a seeded stream is bit-reproducible.
    """
    hf = rng.random() < cfg.hflip
    vf = rng.random() < cfg.vflip
    k = int(rng.integers(0, 4)) if rng.random() < cfg.rot90 else 0
    out = geometric(pair, hf, vf, k)
    if rng.random() < cfg.channel_shuffle:
        perm = rng.permutation(3)
        out = channel_shuffle(out, perm)
    u = rng.random()
    edges = np.cumsum([cfg.mixup, cfg.blend, cfg.cutmix, cfg.cutmixup])
    op = int(np.searchsorted(edges, u, side="right"))
    if op == 4:
        return out
    if op == 1:
        color = rng.uniform(0.0, 1.0, 3)
        lam = rng.uniform(cfg.blend_min, 1.0)
        return blend(out, color, lam)
    if partner is None:
        return out
    if op == 0:
        return mixup(out, partner, float(rng.beta(cfg.mixup_alpha, cfg.mixup_alpha)))
    region = sample_region(out.lr.shape[1], out.lr.shape[2], rng, cfg.cutmix_max_area)
    if op == 2:
        return cutmix(out, partner, region)
    return cutmixup(out, partner, region, float(rng.beta(cfg.cutmix_alpha, cfg.cutmix_alpha)))
