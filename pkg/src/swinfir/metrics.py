"""Y-channel PSNR / SSIM, bicubic resampling and the metric report."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .errors import ShapeError

# ---------------------------------------------------------------------------
# colour
# ---------------------------------------------------------------------------
_Y_COEF = np.array([65.481, 128.553, 24.966]) / 255.0


def rgb_to_y(img: np.ndarray) -> np.ndarray:
    """3 x H x W RGB in [0, 1] -> 1 x H x W BT.601 luma in [16/255, 235/255]."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 3 or img.shape[0] != 3:
        raise ShapeError(f"rgb_to_y expects 3 x H x W, got {img.shape}")
    return (np.tensordot(_Y_COEF, img, axes=(0, 0)) + 16.0 / 255.0)[None]


# ---------------------------------------------------------------------------
# PSNR / SSIM  (images in [0, 1], peak value 1)
# ---------------------------------------------------------------------------
def shave(img: np.ndarray, border: int) -> np.ndarray:
    if border <= 0:
        return img
    return img[..., border:-border, border:-border]


def psnr(a: np.ndarray, b: np.ndarray, border_crop: int = 0, max_val: float = 1.0) -> float:
    """10 log10(max^2 / MSE) after cropping ``border_crop`` pixels per side; ``inf`` when MSE is 0.

    Images are floats in [0, 1] with ``max_val`` 1; pass ``max_val=255`` for 8-bit arrays.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"psnr: shapes {a.shape} and {b.shape} differ")
    sq = (shave(a, border_crop) - shave(b, border_crop)) ** 2
    # exactly rounded sum: the result cannot depend on pixel order (flips, rotations)
    mse = math.fsum(sq.ravel()) / sq.size
    if mse == 0:
        return math.inf
    return 10.0 * math.log10(max_val ** 2 / mse)


@lru_cache(maxsize=None)
def gaussian_kernel(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2
    g = np.exp(-(x ** 2) / (2 * sigma ** 2))
    g /= g.sum()
    g.setflags(write=False)
    return g


def _filter_valid(img: np.ndarray, g: np.ndarray) -> np.ndarray:
    k = g.size
    rows = np.lib.stride_tricks.sliding_window_view(img, k, axis=0) @ g
    return np.lib.stride_tricks.sliding_window_view(rows, k, axis=1) @ g


def ssim(a: np.ndarray, b: np.ndarray, data_range: float = 1.0, win: int = 11, sigma: float = 1.5,
         k1: float = 0.01, k2: float = 0.03) -> float:
    """Mean SSIM of two single-channel images over all fully-contained Gaussian windows."""
    a = np.squeeze(np.asarray(a, dtype=np.float64))
    b = np.squeeze(np.asarray(b, dtype=np.float64))
    if a.shape != b.shape or a.ndim != 2:
        raise ShapeError(f"ssim expects two equal 2-d images, got {a.shape} and {b.shape}")
    if min(a.shape) < win:
        raise ShapeError(f"ssim: image {a.shape} smaller than the {win}x{win} window")
    g = gaussian_kernel(win, sigma)
    c1, c2 = (k1 * data_range) ** 2, (k2 * data_range) ** 2
    mu_a, mu_b = _filter_valid(a, g), _filter_valid(b, g)
    saa = _filter_valid(a * a, g) - mu_a ** 2
    sbb = _filter_valid(b * b, g) - mu_b ** 2
    sab = _filter_valid(a * b, g) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * sab + c2)
    den = (mu_a ** 2 + mu_b ** 2 + c1) * (saa + sbb + c2)
    return float(np.mean(num / den))


def psnr_ssim_y(sr: np.ndarray, hr: np.ndarray, border: int) -> tuple[float, float]:
    """PSNR and SSIM on the Y channel of two 3 x H x W RGB images, ``border`` pixels shaved first."""
    ys, yh = rgb_to_y(sr), rgb_to_y(hr)
    return psnr(ys, yh, border), ssim(shave(ys, border), shave(yh, border))


# ---------------------------------------------------------------------------
# bicubic resampling
# ---------------------------------------------------------------------------
def cubic(x: np.ndarray, a: float = -0.5) -> np.ndarray:
    ax = np.abs(x)
    ax2, ax3 = ax ** 2, ax ** 3
    near = (a + 2) * ax3 - (a + 3) * ax2 + 1
    far = a * ax3 - 5 * a * ax2 + 8 * a * ax - 4 * a
    return np.where(ax <= 1, near, np.where(ax <= 2, far, 0.0))


@lru_cache(maxsize=256)
def resize_matrix(in_len: int, out_len: int, antialias: bool = True) -> np.ndarray:
    """out_len x in_len resampling matrix; pixel-centre aligned, mirrored borders."""
    scale = out_len / in_len
    width = 4.0
    aa = antialias and scale < 1
    if aa:
        width /= scale
    x = np.arange(1, out_len + 1, dtype=np.float64)
    u = x / scale + 0.5 * (1 - 1 / scale)
    left = np.floor(u - width / 2)
    taps = int(math.ceil(width)) + 2
    idx = left[:, None] + np.arange(taps)[None, :]
    dist = u[:, None] - idx
    wts = scale * cubic(dist * scale) if aa else cubic(dist)
    wts /= wts.sum(axis=1, keepdims=True)
    mirror = np.concatenate([np.arange(in_len), np.arange(in_len)[::-1]])
    src = mirror[np.mod(idx.astype(np.int64) - 1, 2 * in_len)]
    m = np.zeros((out_len, in_len))
    np.add.at(m, (np.repeat(np.arange(out_len), taps), src.reshape(-1)), wts.reshape(-1))
    m.setflags(write=False)
    return m


def bicubic_resize(img: np.ndarray, out_h: int, out_w: int, antialias: bool = True) -> np.ndarray:
    """Resize the last two axes with the a=-0.5 cubic kernel (widened by the ratio when shrinking)."""
    if out_h < 1 or out_w < 1:
        raise ShapeError("bicubic_resize: target extents must be positive")
    img = np.asarray(img, dtype=np.float64)
    h, w = img.shape[-2:]
    mh = resize_matrix(h, out_h, antialias)
    mw = resize_matrix(w, out_w, antialias)
    return np.matmul(np.matmul(mh, img), mw.T)


def bicubic_upscale(lr: np.ndarray, scale: int) -> np.ndarray:
    """N x 3 x H x W (or 3 x H x W) -> scale-times larger, clipped to [0, 1]."""
    h, w = lr.shape[-2:]
    return np.clip(bicubic_resize(lr, h * scale, w * scale), 0.0, 1.0)


# ---------------------------------------------------------------------------
# report
# ---------------------------------------------------------------------------
@dataclass
class MetricReport:
    rows: list = field(default_factory=list)  # (name, psnr_db, ssim)
    border: int = 0
    forward_passes: int = 0
    label: str = ""

    def add(self, name: str, p: float, s: float) -> None:
        self.rows.append((name, float(p), float(s)))

    @property
    def mean_psnr(self) -> float:
        rows = sorted(self.rows)
        return float(np.mean([r[1] for r in rows])) if rows else float("nan")

    @property
    def mean_ssim(self) -> float:
        rows = sorted(self.rows)
        return float(np.mean([r[2] for r in rows])) if rows else float("nan")

    def to_text(self) -> str:
        width = max([len("image")] + [len(r[0]) for r in self.rows])
        lines = []
        if self.label:
            lines.append(f"# {self.label}")
        lines.append(f"# Y channel, border {self.border}, forward passes {self.forward_passes}")
        lines.append(f"{'image':<{width}}  {'PSNR(dB)':>9}  {'SSIM':>7}")
        for name, p, s in sorted(self.rows):
            lines.append(f"{name:<{width}}  {p:>9.4f}  {s:>7.4f}")
        lines.append(f"{'mean':<{width}}  {self.mean_psnr:>9.4f}  {self.mean_ssim:>7.4f}")
        return "\n".join(lines) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["name", "psnr_db", "ssim"])
        for name, p, s in sorted(self.rows):
            w.writerow([name, repr(p), repr(s)])
        return buf.getvalue()
