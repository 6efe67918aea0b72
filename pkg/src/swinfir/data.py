"""Image pairs, PNG I/O, dataset ingestion and procedural texture generation."""
from __future__ import annotations

import hashlib
import logging
import os
from dataclasses import dataclass
from pathlib import Path

import cv2
import numpy as np

from .errors import DataError
from .metrics import bicubic_resize

log = logging.getLogger(__name__)


@dataclass
class ImagePair:
    """Aligned LR / HR images, 3 x h x w and 3 x (scale*h) x (scale*w), values in [0, 1]."""

    id: str
    lr: np.ndarray
    hr: np.ndarray
    scale: int

    def __post_init__(self):
        if self.lr.ndim != 3 or self.hr.ndim != 3 or self.lr.shape[0] != 3 or self.hr.shape[0] != 3:
            raise DataError(f"{self.id}: images must be 3 x H x W")
        _, h, w = self.lr.shape
        if self.hr.shape[1:] != (h * self.scale, w * self.scale):
            raise DataError(f"{self.id}: HR {self.hr.shape[1:]} is not {self.scale}x LR {(h, w)}")

    def digest(self) -> str:
        h = hashlib.sha256()
        for a in (self.lr, self.hr):
            h.update(np.ascontiguousarray(a, dtype="<f8").tobytes())
        return h.hexdigest()


def read_image(path) -> np.ndarray:
    """Read an 8- or 16-bit PNG as a 3 x H x W float64 RGB array in [0, 1]."""
    img = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if img is None:
        raise DataError(f"cannot read image {path}")
    if img.dtype == np.uint8:
        scale = 255.0
    elif img.dtype == np.uint16:
        scale = 65535.0
    else:
        raise DataError(f"{path}: unsupported sample type {img.dtype}")
    if img.ndim == 2:
        img = np.repeat(img[:, :, None], 3, axis=2)
    elif img.shape[2] == 4:
        img = img[:, :, :3]
    rgb = img[:, :, ::-1].astype(np.float64) / scale
    return np.ascontiguousarray(rgb.transpose(2, 0, 1))


def to_uint8(img: np.ndarray) -> np.ndarray:
    return np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)


def write_image(path, img: np.ndarray) -> None:
    """Write a 3 x H x W array in [0, 1] as an 8-bit RGB PNG."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    bgr = to_uint8(img).transpose(1, 2, 0)[:, :, ::-1]
    if not cv2.imwrite(str(path), np.ascontiguousarray(bgr)):
        raise DataError(f"cannot write image {path}")


def _pngs(d: Path) -> list[Path]:
    return sorted(p for p in d.iterdir() if p.suffix.lower() == ".png" and p.is_file())


def modcrop_center(img: np.ndarray, scale: int) -> np.ndarray:
    _, h, w = img.shape
    hh, ww = h - h % scale, w - w % scale
    if hh == 0 or ww == 0:
        raise DataError(f"image {h}x{w} cannot be cropped to a multiple of {scale}")
    y, x = (h - hh) // 2, (w - ww) // 2
    return img[:, y:y + hh, x:x + ww]


def synthesize_pair(name: str, hr: np.ndarray, scale: int) -> ImagePair:
    hr = modcrop_center(hr, scale)
    _, h, w = hr.shape
    lr = bicubic_resize(hr, h // scale, w // scale)
    return ImagePair(name, lr, np.ascontiguousarray(hr), scale)


def ingest(directory, scale: int, synth_lr: bool = True) -> list[ImagePair]:
    """Load a dataset directory as image pairs sorted by file name.

    With ``synth_lr`` the directory (or its ``HR`` subdirectory) holds HR images;
    each is centre-cropped to a multiple of ``scale`` and downscaled bicubically.
    Otherwise ``HR/`` and ``LR/`` must hold identically named, aligned files.
    """
    d = Path(directory)
    if not d.is_dir():
        raise DataError(f"dataset directory {d} does not exist")
    pairs = []
    if synth_lr:
        src = d / "HR" if (d / "HR").is_dir() else d
        for p in _pngs(src):
            pairs.append(synthesize_pair(p.stem, read_image(p), scale))
    else:
        hr_dir, lr_dir = d / "HR", d / "LR"
        if not hr_dir.is_dir() or not lr_dir.is_dir():
            raise DataError(f"{d} needs HR/ and LR/ subdirectories when LR images are provided")
        hr_files, lr_files = _pngs(hr_dir), _pngs(lr_dir)
        if [p.name for p in hr_files] != [p.name for p in lr_files]:
            raise DataError(f"{d}: HR and LR file names differ")
        for ph, pl in zip(hr_files, lr_files):
            lr = read_image(pl)
            hr = read_image(ph)
            if hr.shape[1:] != (lr.shape[1] * scale, lr.shape[2] * scale):
                raise DataError(f"{ph.name}: HR {hr.shape[1:]} does not match {scale}x LR {lr.shape[1:]}")
            pairs.append(ImagePair(ph.stem, lr, hr, scale))
    if not pairs:
        log.warning("no PNG images found in %s", d)
    return pairs


# ---------------------------------------------------------------------------
# procedural textures
# ---------------------------------------------------------------------------
# shortest grating period (and about twice the smallest checker cell) in HR pixels, kept above
# the Nyquist limit of a x4 downsampling so the detail is recoverable from the LR image
MIN_PERIOD = 9


def _grid(size: int):
    yy, xx = np.meshgrid(np.arange(size, dtype=np.float64), np.arange(size, dtype=np.float64), indexing="ij")
    return yy, xx


def _gratings(rng, size):
    yy, xx = _grid(size)
    out = np.zeros((size, size))
    for _ in range(rng.integers(1, 4)):
        theta = rng.uniform(0, np.pi)
        period = rng.uniform(MIN_PERIOD, 16.0)
        phase = rng.uniform(0, 2 * np.pi)
        wave = np.sin(2 * np.pi * (xx * np.cos(theta) + yy * np.sin(theta)) / period + phase)
        if rng.random() < 0.5:
            wave = np.tanh(3.0 * wave)  # sharpened stripes
        out += rng.uniform(0.3, 1.0) * wave
    return out


def _shapes(rng, size):
    yy, xx = _grid(size)
    out = np.zeros((size, size))
    for _ in range(rng.integers(4, 12)):
        v = rng.uniform(-1, 1)
        if rng.random() < 0.5:
            cy, cx = rng.uniform(0, size, 2)
            r = rng.uniform(2, size / 4)
            out[(yy - cy) ** 2 + (xx - cx) ** 2 < r * r] = v
        else:
            y0, x0 = rng.integers(0, size, 2)
            hh, ww = rng.integers(2, size // 2, 2)
            out[y0:y0 + hh, x0:x0 + ww] = v
    return out


def _checker(rng, size):
    yy, xx = _grid(size)
    cell = rng.integers(MIN_PERIOD // 2 + 1, 10)
    theta = rng.uniform(0, np.pi / 2)
    u = (xx * np.cos(theta) + yy * np.sin(theta)) / cell
    v = (-xx * np.sin(theta) + yy * np.cos(theta)) / cell
    return np.where((np.floor(u) + np.floor(v)) % 2 == 0, 1.0, -1.0)


def synth_texture(rng: np.random.Generator, size: int) -> np.ndarray:
    """A colourful 3 x size x size texture in [0, 1] mixing gratings, checkers and flat shapes."""
    gens = (_gratings, _shapes, _checker)
    img = np.zeros((3, size, size))
    for _ in range(2):
        pattern = gens[rng.integers(0, len(gens))](rng, size)
        # mostly luminance with a tint, so detail is not hidden in chroma the Y metrics ignore
        color = rng.choice((-1.0, 1.0)) * rng.uniform(0.4, 1.0) * (1.0 + 0.4 * rng.uniform(-1, 1, 3))
        img += color[:, None, None] * pattern[None]
    yy, xx = _grid(size)
    ramp = (rng.uniform(-1, 1, 3)[:, None, None] * (xx + yy)[None] / (2 * size))
    img = 0.5 + 0.22 * img + 0.15 * ramp
    return np.clip(img, 0.0, 1.0)


def write_texture_set(directory, count: int, size: int, seed: int) -> list[Path]:
    """Write ``count`` seeded textures as 8-bit PNGs named ``tex_0000.png`` ...; returns their paths."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    paths = []
    for i in range(count):
        p = d / f"tex_{i:04d}.png"
        write_image(p, synth_texture(rng, size))
        paths.append(p)
    return paths


def atomic_write_bytes(path, payload: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + f".tmp{os.getpid()}")
    with open(tmp, "wb") as f:
        f.write(payload)
        f.flush()
        os.fsync(f.fileno())
    os.replace(tmp, path)
