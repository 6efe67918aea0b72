"""Composite layers: spatial branch, SFB and its hourglass form, window attention,
Swin transformer layers (plain, SFB-replaced and hybrid) and the residual group.

Layout: convolutional blocks take N x C x H x W. Transformer layers take
token-major N x H x W x C, i.e. token ``i*W + j`` of image ``n`` is pixel
``(i, j)``; :class:`RSTB` converts once on entry and once on exit.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import tensor as T
from .errors import ShapeError
from .nn import Conv2d, LayerNorm, Linear, Module, ModuleList, trunc_normal
from .spectral import FrequencyBlock
from .tensor import Tensor

MASK_FILL = -100.0


@dataclass(frozen=True)
class WindowSpec:
    window_size: int
    shift: int = 0

    def __post_init__(self):
        if self.window_size < 1:
            raise ValueError("window_size must be >= 1")
        if not 0 <= self.shift < self.window_size:
            raise ValueError(f"shift must lie in [0, {self.window_size})")


# ---------------------------------------------------------------------------
# convolutional blocks
# ---------------------------------------------------------------------------
class SpatialBranch(Module):
    """``conv3x3 -> LeakyReLU -> conv3x3`` plus identity; ``hidden < dim`` gives the hourglass form."""

    def __init__(self, dim: int, hidden: int | None = None, negative_slope: float = 0.2, rng=None, dtype=np.float32):
        super().__init__()
        hidden = dim if hidden is None else hidden
        self.dim, self.negative_slope = dim, negative_slope
        self.head = Conv2d(dim, hidden, 3, rng=rng, dtype=dtype)
        self.tail = Conv2d(hidden, dim, 3, rng=rng, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        if x.ndim != 4 or x.shape[1] != self.dim:
            raise ShapeError(f"spatial branch expects {self.dim} channels, got shape {x.shape}")
        return self.tail(T.leaky_relu(self.head(x), self.negative_slope)) + x


class SFB(Module):
    """Spatial-frequency block: 1x1 fusion of the concatenated spatial and frequency branches."""

    hourglass = False

    def __init__(self, dim: int, negative_slope: float = 0.2, rng=None, dtype=np.float32):
        super().__init__()
        if self.hourglass and dim % 2:
            raise ShapeError(f"hourglass SFB needs an even channel count, got {dim}")
        hidden = dim // 2 if self.hourglass else dim
        self.dim = dim
        self.spatial = SpatialBranch(dim, hidden, negative_slope, rng=rng, dtype=dtype)
        self.frequency = FrequencyBlock(dim, hidden, negative_slope, rng=rng, dtype=dtype)
        self.fusion = Conv2d(2 * dim, dim, 1, rng=rng, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        return self.fusion(T.concat([self.spatial(x), self.frequency(x)], axis=1))


class HourglassSFB(SFB):
    """SFB whose spatial and frequency branches both run at half width internally."""

    hourglass = True


# ---------------------------------------------------------------------------
# windows
# ---------------------------------------------------------------------------
def _check_windows(h: int, w: int, ws: int) -> None:
    if h % ws or w % ws:
        raise ShapeError(f"feature map {h}x{w} is not divisible by window size {ws}")


def partition_tokens(x: Tensor, ws: int) -> Tensor:
    """N x H x W x C -> (N * H/ws * W/ws) x ws^2 x C, windows in row-major order per image."""
    n, h, w, c = x.shape
    _check_windows(h, w, ws)
    y = x.reshape(n, h // ws, ws, w // ws, ws, c).transpose(0, 1, 3, 2, 4, 5)
    return y.reshape(-1, ws * ws, c)


def reverse_tokens(windows: Tensor, ws: int, h: int, w: int) -> Tensor:
    _check_windows(h, w, ws)
    c = windows.shape[-1]
    n = windows.shape[0] // ((h // ws) * (w // ws))
    y = windows.reshape(n, h // ws, w // ws, ws, ws, c).transpose(0, 1, 3, 2, 4, 5)
    return y.reshape(n, h, w, c)


def window_partition(x: Tensor, ws: int) -> Tensor:
    """N x C x H x W -> (N * H/ws * W/ws) x ws^2 x C."""
    return partition_tokens(x.transpose(0, 2, 3, 1), ws)


def window_reverse(windows: Tensor, ws: int, h: int, w: int) -> Tensor:
    """Inverse of :func:`window_partition`, returning N x C x H x W."""
    return reverse_tokens(windows, ws, h, w).transpose(0, 3, 1, 2)


@lru_cache(maxsize=None)
def relative_position_index(ws: int) -> np.ndarray:
    coords = np.stack(np.meshgrid(np.arange(ws), np.arange(ws), indexing="ij")).reshape(2, -1)
    rel = coords[:, :, None] - coords[:, None, :] + (ws - 1)
    idx = rel[0] * (2 * ws - 1) + rel[1]
    idx.setflags(write=False)
    return idx


@lru_cache(maxsize=None)
def shift_region_labels(h: int, w: int, ws: int, shift: int) -> np.ndarray:
    """Region id of each pixel of the rolled map; pixels from different regions must not attend."""
    labels = np.zeros((h, w), dtype=np.int64)
    cuts = (slice(0, -ws), slice(-ws, -shift), slice(-shift, None))
    cnt = 0
    for hs in cuts:
        for wsl in cuts:
            labels[hs, wsl] = cnt
            cnt += 1
    labels.setflags(write=False)
    return labels


@lru_cache(maxsize=None)
def attention_mask(h: int, w: int, ws: int, shift: int) -> np.ndarray:
    """nW x ws^2 x ws^2 additive mask: 0 within a region, ``MASK_FILL`` across regions."""
    _check_windows(h, w, ws)
    lab = shift_region_labels(h, w, ws, shift)
    win = lab.reshape(h // ws, ws, w // ws, ws).transpose(0, 2, 1, 3).reshape(-1, ws * ws)
    mask = np.where(win[:, :, None] == win[:, None, :], 0.0, MASK_FILL)
    mask.setflags(write=False)
    return mask


class WindowAttention(Module):
    """Multi-head self-attention inside each window with a learned relative position bias."""

    def __init__(self, dim: int, window_size: int, heads: int, rng=None, dtype=np.float32):
        super().__init__()
        if dim % heads:
            raise ShapeError(f"dim {dim} is not divisible by heads {heads}")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.dim, self.ws, self.heads = dim, window_size, heads
        self.scale = (dim // heads) ** -0.5
        self.relative_position_bias_table = Tensor(
            trunc_normal(rng, ((2 * window_size - 1) ** 2, heads)), requires_grad=True, dtype=dtype
        )
        self.qkv = Linear(dim, 3 * dim, rng=rng, dtype=dtype)
        self.proj = Linear(dim, dim, rng=rng, dtype=dtype)

    def position_bias(self) -> Tensor:
        L = self.ws * self.ws
        b = T.take(self.relative_position_bias_table, relative_position_index(self.ws))
        return b.reshape(L, L, self.heads).transpose(2, 0, 1)

    def forward(self, tokens: Tensor, mask: np.ndarray | None = None, return_attn: bool = False):
        B, L, C = tokens.shape
        if C != self.dim or L != self.ws * self.ws:
            raise ShapeError(f"window attention expects (*, {self.ws ** 2}, {self.dim}), got {tokens.shape}")
        h, d = self.heads, C // self.heads
        qkv = self.qkv(tokens).reshape(B, L, 3, h, d).transpose(2, 0, 3, 1, 4)
        q, k, v = qkv[0] * self.scale, qkv[1], qkv[2]
        scores = T.add_bias(q @ k.transpose(0, 1, 3, 2), self.position_bias())
        if mask is not None:
            nw = mask.shape[0]
            scores = T.add_bias(scores.reshape(B // nw, nw, h, L, L), mask[None, :, None])
            scores = scores.reshape(B, h, L, L)
        attn = T.softmax(scores, axis=-1)
        out = self.proj((attn @ v).transpose(0, 2, 1, 3).reshape(B, L, C))
        return (out, attn) if return_attn else out


class Mlp(Module):
    def __init__(self, dim: int, hidden: int, rng=None, dtype=np.float32):
        super().__init__()
        self.fc1 = Linear(dim, hidden, rng=rng, dtype=dtype)
        self.fc2 = Linear(hidden, dim, rng=rng, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        return self.fc2(T.gelu(self.fc1(x)))


# ---------------------------------------------------------------------------
# transformer layers (token-major N x H x W x C)
# ---------------------------------------------------------------------------
class STL(Module):
    """Swin transformer layer: ``x + attn(LN(x))`` then ``+ mlp(LN(.))``, with optional cyclic shift."""

    def __init__(self, dim: int, heads: int, window: WindowSpec, mlp_ratio: float = 2.0, rng=None, dtype=np.float32):
        super().__init__()
        self.dim, self.window = dim, window
        self.norm1 = LayerNorm(dim, dtype=dtype)
        self.attn = WindowAttention(dim, window.window_size, heads, rng=rng, dtype=dtype)
        self.norm2 = LayerNorm(dim, dtype=dtype)
        self.mlp = Mlp(dim, int(dim * mlp_ratio), rng=rng, dtype=dtype)

    def mixer(self, y: Tensor) -> Tensor:
        n, h, w, c = y.shape
        ws, s = self.window.window_size, self.window.shift
        _check_windows(h, w, ws)
        mask = None
        if s:
            y = T.roll(y, (-s, -s), (1, 2))
            mask = attention_mask(h, w, ws, s)
        y = reverse_tokens(self.attn(partition_tokens(y, ws), mask), ws, h, w)
        if s:
            y = T.roll(y, (s, s), (1, 2))
        return y

    def forward(self, x: Tensor) -> Tensor:
        if x.ndim != 4 or x.shape[-1] != self.dim:
            raise ShapeError(f"transformer layer expects N x H x W x {self.dim}, got {x.shape}")
        x = x + self.mixer(self.norm1(x))
        return x + self.mlp(self.norm2(x))


def _sfb_on_tokens(block: Module, y: Tensor) -> Tensor:
    return block(y.transpose(0, 3, 1, 2)).transpose(0, 2, 3, 1)


class SFTL(STL):
    """Transformer layer whose attention sublayer is replaced by an SFB."""

    def __init__(self, dim: int, heads: int, window: WindowSpec, mlp_ratio: float = 2.0, sfb_cls=SFB,
                 negative_slope: float = 0.2, rng=None, dtype=np.float32):
        Module.__init__(self)
        self.dim, self.window = dim, window
        self.norm1 = LayerNorm(dim, dtype=dtype)
        self.sfb = sfb_cls(dim, negative_slope, rng=rng, dtype=dtype)
        self.norm2 = LayerNorm(dim, dtype=dtype)
        self.mlp = Mlp(dim, int(dim * mlp_ratio), rng=rng, dtype=dtype)

    def mixer(self, y: Tensor) -> Tensor:
        return _sfb_on_tokens(self.sfb, y)


class HSTL(STL):
    """Transformer layer running window attention and an SFB side by side; their outputs are summed."""

    def __init__(self, dim: int, heads: int, window: WindowSpec, mlp_ratio: float = 2.0, sfb_cls=SFB,
                 negative_slope: float = 0.2, rng=None, dtype=np.float32):
        super().__init__(dim, heads, window, mlp_ratio, rng=rng, dtype=dtype)
        self.sfb = sfb_cls(dim, negative_slope, rng=rng, dtype=dtype)

    def mixer(self, y: Tensor) -> Tensor:
        return super().mixer(y) + _sfb_on_tokens(self.sfb, y)


BLOCK_VARIANTS = ("SFB", "HourglassSFB", "FBonly", "ConvBaseline")
LAYER_VARIANTS = ("STL", "SFTL", "HSTL")


def make_block(variant: str, dim: int, negative_slope: float = 0.2, rng=None, dtype=np.float32) -> Module:
    if variant == "SFB":
        return SFB(dim, negative_slope, rng=rng, dtype=dtype)
    if variant == "HourglassSFB":
        return HourglassSFB(dim, negative_slope, rng=rng, dtype=dtype)
    if variant == "FBonly":
        return FrequencyBlock(dim, negative_slope=negative_slope, rng=rng, dtype=dtype)
    if variant == "ConvBaseline":
        return Conv2d(dim, dim, 3, rng=rng, dtype=dtype)
    raise ValueError(f"unknown block variant {variant!r}; expected one of {BLOCK_VARIANTS}")


class RSTB(Module):
    """Residual group: ``depth`` transformer layers with alternating shift, then a conv block, plus identity."""

    def __init__(self, dim: int, depth: int, heads: int, window_size: int, mlp_ratio: float = 2.0,
                 block_variant: str = "SFB", layer_variant: str = "STL", negative_slope: float = 0.2,
                 rng=None, dtype=np.float32):
        super().__init__()
        if layer_variant not in LAYER_VARIANTS:
            raise ValueError(f"unknown layer variant {layer_variant!r}; expected one of {LAYER_VARIANTS}")
        sfb_cls = HourglassSFB if block_variant == "HourglassSFB" else SFB
        self.layers = ModuleList()
        for i in range(depth):
            spec = WindowSpec(window_size, 0 if i % 2 == 0 else window_size // 2)
            if layer_variant == "STL":
                layer = STL(dim, heads, spec, mlp_ratio, rng=rng, dtype=dtype)
            else:
                cls = SFTL if layer_variant == "SFTL" else HSTL
                layer = cls(dim, heads, spec, mlp_ratio, sfb_cls, negative_slope, rng=rng, dtype=dtype)
            self.layers.append(layer)
        self.conv = make_block(block_variant, dim, negative_slope, rng=rng, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        t = x.transpose(0, 2, 3, 1)
        for layer in self.layers:
            t = layer(t)
        return self.conv(t.transpose(0, 3, 1, 2)) + x
