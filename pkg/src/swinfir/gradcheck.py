"""Finite-difference gradient suite over every differentiable building block.

Each case builds a small float64 instance, re-draws its parameters at a
scale where the nonlinearities actually bend, and reduces the output to a
scalar with a fixed random projection. Reverse-mode gradients are then
compared with central differences on the input and on every parameter
tensor (all coordinates of small tensors, a seeded sample of large ones).

The error of a coordinate is ``|g_ad - g_fd| / (|g_fd| + FLOOR)``; a case
passes when its worst coordinate stays below ``TOL``. The projection weights
are small (std ``PROJECTION``) so that finite-difference roundoff on exactly
zero gradients, such as the key bias of an attention head (softmax ignores
it), stays well under the absolute floor. Coordinates whose stencil
straddles a LeakyReLU kink are re-measured with a smaller step.
"""
from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import tensor as T
from .blocks import HSTL, RSTB, SFB, SFTL, STL, HourglassSFB, SpatialBranch, WindowAttention, WindowSpec, attention_mask
from .model import ModelConfig, build
from .nn import Module
from .spectral import FrequencyBlock
from .tensor import Tensor
from .trainops import charbonnier_loss

DTYPE = np.float64
TOL = 1e-4
FLOOR = 1e-8
STEP = 1e-5
MIN_STEP = 1e-7
PROJECTION = 1e-4
KINK_RATIO = 1e-5  # smooth coordinates show ~1e-6 at STEP, kinks 1e-4 and up
KINK_NOISE = 1e-10  # roundoff level of a one-sided slope at the projection scale
SAMPLE = 6  # coordinates checked per large tensor


@dataclass
class Case:
    """A scalar function of some leaf tensors, ready for checking."""

    loss: Callable[[], Tensor]
    leaves: dict  # name -> Tensor
    exhaustive: tuple = ()  # leaves whose every coordinate is checked


@dataclass
class CheckResult:
    name: str
    seed: int
    error: float
    worst: str  # leaf holding the worst coordinate
    coords: int
    seconds: float
    kinks: int = 0  # coordinates whose smallest stencil still straddled a kink

    @property
    def passed(self) -> bool:
        return bool(self.error < TOL)


def _randomize(module: Module, rng: np.random.Generator, std: float = 0.3) -> None:
    for _, p in module.named_parameters():
        p.data = rng.normal(0.0, std, p.shape).astype(DTYPE)


def _projected(module: Module, x: Tensor, rng: np.random.Generator, call=None) -> Case:
    out_shape = (call or module)(x).shape
    w = rng.normal(0.0, PROJECTION, size=out_shape)

    def loss():
        return T.tsum(T.mul_const((call or module)(x), w))

    leaves = {"input": x}
    leaves.update(module.named_parameters())
    return Case(loss, leaves)


def _input(rng, shape) -> Tensor:
    return Tensor(rng.normal(size=shape), requires_grad=True, dtype=DTYPE)


def _module_case(factory, shape):
    def make(seed: int) -> Case:
        rng = np.random.default_rng(seed)
        m = factory(rng)
        _randomize(m, rng)
        return _projected(m, _input(rng, shape), rng)
    return make


def _attention_case(seed: int) -> Case:
    rng = np.random.default_rng(seed)
    m = WindowAttention(8, 3, 2, rng=rng, dtype=DTYPE)
    _randomize(m, rng)
    mask = attention_mask(6, 6, 3, 1)
    x = _input(rng, (2 * mask.shape[0], 9, 8))
    return _projected(m, x, rng, call=lambda t: m(t, mask))


def _toy_case(seed: int) -> Case:
    rng = np.random.default_rng(seed)
    m = build(ModelConfig.toy(), seed=seed, dtype=DTYPE)
    _randomize(m, rng, std=0.1)
    # 7 x 8 forces the pad-to-window-multiple and crop path
    x = Tensor(rng.uniform(size=(1, 3, 7, 8)), requires_grad=True, dtype=DTYPE)
    return _projected(m, x, rng)


def _charbonnier_case(seed: int) -> Case:
    rng = np.random.default_rng(seed)
    pred = _input(rng, (2, 3, 5, 5))
    target = rng.normal(size=(2, 3, 5, 5))
    target.reshape(-1)[:5] = pred.data.reshape(-1)[:5]  # include exact zero residuals
    return Case(lambda: charbonnier_loss(pred, target, 1e-3), {"pred": pred}, exhaustive=("pred",))


CASES: dict[str, Callable[[int], Case]] = {
    "frequency_block": _module_case(lambda r: FrequencyBlock(4, rng=r, dtype=DTYPE), (1, 4, 6, 7)),
    "spatial_branch": _module_case(lambda r: SpatialBranch(4, rng=r, dtype=DTYPE), (1, 4, 6, 6)),
    "sfb": _module_case(lambda r: SFB(4, rng=r, dtype=DTYPE), (1, 4, 6, 8)),
    "hourglass_sfb": _module_case(lambda r: HourglassSFB(4, rng=r, dtype=DTYPE), (1, 4, 6, 8)),
    "window_attention": _attention_case,
    "stl": _module_case(lambda r: STL(8, 2, WindowSpec(3, 1), rng=r, dtype=DTYPE), (1, 6, 6, 8)),
    "rstb": _module_case(lambda r: RSTB(8, 2, 2, 3, rng=r, dtype=DTYPE), (1, 8, 6, 6)),
    "sftl": _module_case(lambda r: SFTL(8, 2, WindowSpec(3, 1), rng=r, dtype=DTYPE), (1, 6, 6, 8)),
    "hstl": _module_case(lambda r: HSTL(8, 2, WindowSpec(3, 1), rng=r, dtype=DTYPE), (1, 6, 6, 8)),
    "toy_model": _toy_case,
    "charbonnier_loss": _charbonnier_case,
}


def _coords(size: int, rng: np.random.Generator, limit: int) -> np.ndarray:
    if size <= 4 * limit:
        return np.arange(size)
    return np.sort(rng.choice(size, limit, replace=False))


def _central(case: Case, flat: np.ndarray, i: int, f0: float, step: float) -> tuple[float, bool]:
    """Central difference at coordinate ``i``; retried with smaller steps when a kink is straddled.

    A kink (LeakyReLU crossing zero inside the stencil) shows up as one-sided
    slopes that disagree by far more than the curvature term ``step * f''``.
    Returns the estimate and whether the final stencil still looked kinked.
    """
    orig = flat[i]
    h = step
    while True:
        flat[i] = orig + h
        fp = case.loss().item()
        flat[i] = orig - h
        fm = case.loss().item()
        flat[i] = orig
        up, down = (fp - f0) / h, (f0 - fm) / h
        kinked = abs(up - down) > KINK_RATIO * max(abs(up), abs(down)) + KINK_NOISE
        if not kinked or h <= MIN_STEP:
            return (fp - fm) / (2 * h), kinked
        h /= 10.0


def check_case(name: str, seed: int, step: float = STEP, sample: int = SAMPLE) -> CheckResult:
    t0 = time.perf_counter()
    case = CASES[name](seed)
    loss = case.loss()
    T.backward(loss)
    f0 = loss.item()
    pick = np.random.default_rng([seed, 7])
    worst, worst_name, n, kinks = 0.0, "", 0, 0
    for leaf_name, leaf in case.leaves.items():
        analytic = np.zeros(leaf.shape) if leaf.grad is None else np.asarray(leaf.grad, dtype=np.float64)
        flat = leaf.data.reshape(-1)
        idx = np.arange(flat.size) if leaf_name in case.exhaustive else _coords(flat.size, pick, sample)
        numeric = np.empty(idx.size)
        with T.no_grad():
            for j, i in enumerate(idx):
                numeric[j], kinked = _central(case, flat, i, f0, step)
                kinks += kinked
        a = analytic.reshape(-1)[idx]
        err = np.abs(a - numeric) / (np.abs(numeric) + FLOOR)
        n += idx.size
        if err.size and err.max() >= worst:
            worst, worst_name = float(err.max()), leaf_name
    return CheckResult(name, seed, worst, worst_name, n, time.perf_counter() - t0, kinks)


def run_suite(seeds=(0, 1, 2), names=None, report=None) -> list[CheckResult]:
    """Check every case under every seed; ``report`` (if given) is called with each result."""
    results = []
    for name in names or CASES:
        for seed in seeds:
            r = check_case(name, seed)
            results.append(r)
            if report:
                report(r)
    return results
