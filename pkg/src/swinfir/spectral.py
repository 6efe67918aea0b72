"""Channel-wise 2-D real FFT and the frequency block.

The transform is a recursive mixed-radix Cooley-Tukey FFT: a length ``n`` is
split as ``p * m`` with ``p`` its smallest prime factor, the ``p`` decimated
sub-sequences are transformed recursively, and the butterflies of radix ``p``
are applied as a small dense DFT matrix. Any extent works; primes fall back to
a single dense DFT.

Convention: unnormalised forward transform, ``1/(H*W)`` on the inverse. A
spectrum of an ``H x W`` real image has ``H x (W//2 + 1)`` complex bins. In
packed form the real parts occupy channels ``[0, C)`` and the imaginary parts
channels ``[C, 2C)``.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import tensor as T
from .errors import ShapeError
from .nn import Conv2d, Module
from .tensor import Tensor


# ---------------------------------------------------------------------------
# complex FFT core (plain numpy, no autodiff)
# ---------------------------------------------------------------------------
def _smallest_factor(n: int) -> int:
    if n % 2 == 0:
        return 2
    f = 3
    while f * f <= n:
        if n % f == 0:
            return f
        f += 2
    return n


@lru_cache(maxsize=None)
def _dft_matrix(p: int) -> np.ndarray:
    k = np.arange(p)
    return np.exp(-2j * np.pi * np.outer(k, k) / p)


@lru_cache(maxsize=None)
def _twiddles(n: int, p: int) -> np.ndarray:
    m = n // p
    return np.exp(-2j * np.pi * np.outer(np.arange(p), np.arange(m)) / n)


_CODELET_MAX = 32  # lengths handled by one dense DFT matmul; BLAS beats recursion overhead up to here


def _fft_last(x: np.ndarray) -> np.ndarray:
    n = x.shape[-1]
    if n == 1:
        return x.copy()
    p = _smallest_factor(n)
    if p == n or n <= _CODELET_MAX:
        return x @ _dft_matrix(n).T
    m = n // p
    # x[..., q*p + r] -> sub[..., r, q]
    sub = np.swapaxes(x.reshape(x.shape[:-1] + (m, p)), -1, -2)
    y = _fft_last(sub) * _twiddles(n, p)  # y[..., r, k1]
    # out[..., k2, k1] = sum_r F_p[k2, r] y[..., r, k1]
    out = np.matmul(_dft_matrix(p), y)
    return out.reshape(x.shape[:-1] + (n,))


def fft(x: np.ndarray, axis: int = -1) -> np.ndarray:
    """Forward complex DFT along ``axis`` (unnormalised)."""
    x = np.moveaxis(np.asarray(x, dtype=np.complex128), axis, -1)
    return np.moveaxis(_fft_last(x), -1, axis)


def ifft(x: np.ndarray, axis: int = -1) -> np.ndarray:
    """Inverse complex DFT along ``axis`` with ``1/n`` normalisation."""
    n = np.shape(x)[axis]
    return np.conj(fft(np.conj(x), axis)) / n


def _rfft2_np(x: np.ndarray) -> np.ndarray:
    w = x.shape[-1]
    half = fft(x, axis=-1)[..., : w // 2 + 1]
    return fft(half, axis=-2)


def _hermitian_weights(w: int) -> np.ndarray:
    c = np.full(w // 2 + 1, 2.0)
    c[0] = 1.0
    if w % 2 == 0:
        c[-1] = 1.0
    return c


def _irfft2_np(s: np.ndarray, w: int) -> np.ndarray:
    t = ifft(s, axis=-2)
    nb = w // 2 + 1
    full = np.zeros(t.shape[:-1] + (w,), dtype=np.complex128)
    full[..., :nb] = t
    # bins w-k mirror k for 1 <= k <= (w-1)//2
    k = np.arange(1, (w - 1) // 2 + 1)
    full[..., w - k] = np.conj(t[..., k])
    return ifft(full, axis=-1).real


# ---------------------------------------------------------------------------
# differentiable packed transforms
# ---------------------------------------------------------------------------
def rfft2_packed(x: Tensor) -> Tensor:
    """N x C x H x W real -> N x 2C x H x (W//2+1): real parts then imaginary parts."""
    if x.ndim != 4:
        raise ShapeError("rfft2 expects an N x C x H x W tensor")
    n, c, h, w = x.shape
    s = _rfft2_np(x.data)
    out = np.concatenate([s.real, s.imag], axis=1)
    nb = w // 2 + 1

    def bw(g):
        gc = g[:, :c] + 1j * g[:, c:]
        full = np.zeros((n, c, h, w), dtype=np.complex128)
        full[..., :nb] = np.conj(gc)
        return (fft(fft(full, axis=-1), axis=-2).real,)

    return T.record(out, (x,), bw, "rfft2")


def irfft2_packed(s: Tensor, h: int, w: int) -> Tensor:
    """Inverse of :func:`rfft2_packed` onto an ``h x w`` real grid."""
    if s.ndim != 4 or s.shape[1] % 2 or s.shape[2] != h or s.shape[3] != w // 2 + 1:
        raise ShapeError(f"irfft2: spectrum shape {s.shape} inconsistent with target {h}x{w}")
    c = s.shape[1] // 2
    spec = s.data[:, :c] + 1j * s.data[:, c:]
    y = _irfft2_np(spec, w)
    weights = _hermitian_weights(w) / (h * w)

    def bw(g):
        gs = _rfft2_np(g) * weights
        return (np.concatenate([gs.real, gs.imag], axis=1),)

    return T.record(y, (s,), bw, "irfft2")


@dataclass
class ComplexSpectrum:
    """Half spectrum of a real N x C x H x W tensor, real and imaginary parts as separate tensors."""

    real: Tensor
    imag: Tensor
    height: int
    width: int

    @property
    def shape(self) -> tuple[int, ...]:
        return self.real.shape

    def to_complex(self) -> np.ndarray:
        return self.real.data + 1j * self.imag.data


def rfft2(x: Tensor) -> ComplexSpectrum:
    packed = rfft2_packed(x)
    c = x.shape[1]
    return ComplexSpectrum(packed[:, :c], packed[:, c:], x.shape[2], x.shape[3])


def irfft2(s: ComplexSpectrum, h: int, w: int) -> Tensor:
    return irfft2_packed(T.concat([s.real, s.imag], axis=1), h, w)


# ---------------------------------------------------------------------------
# frequency block
# ---------------------------------------------------------------------------
class FrequencyBlock(Module):
    """Spectral transform: 1x1 conv + LeakyReLU, FFT, frequency 1x1 conv + LeakyReLU, inverse FFT, residual, 1x1 conv.

    ``hidden`` is the channel width between the entry and exit convolutions
    (``dim`` by default). The frequency conv mixes all ``2*hidden`` real/imag
    channels.
    """

    def __init__(self, dim: int, hidden: int | None = None, negative_slope: float = 0.2, rng=None, dtype=np.float32):
        super().__init__()
        hidden = dim if hidden is None else hidden
        self.dim, self.hidden, self.negative_slope = dim, hidden, negative_slope
        self.entry = Conv2d(dim, hidden, 1, rng=rng, dtype=dtype)
        self.freq = Conv2d(2 * hidden, 2 * hidden, 1, rng=rng, dtype=dtype)
        self.exit = Conv2d(hidden, dim, 1, rng=rng, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        if x.ndim != 4 or x.shape[1] != self.dim:
            raise ShapeError(f"frequency block expects {self.dim} channels, got shape {x.shape}")
        h, w = x.shape[-2:]
        u = T.leaky_relu(self.entry(x), self.negative_slope)
        spec = T.leaky_relu(self.freq(rfft2_packed(u)), self.negative_slope)
        return self.exit(irfft2_packed(spec, h, w) + u)


def frequency_block(x: Tensor, params: FrequencyBlock) -> Tensor:
    return params(x)
