"""SwinFIR assembly: shallow conv, a stack of residual groups, and sub-pixel reconstruction."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from . import tensor as T
from .blocks import BLOCK_VARIANTS, LAYER_VARIANTS, RSTB
from .errors import ConfigError, ShapeError
from .nn import Conv2d, LayerNorm, Module, ModuleList, channel_layer_norm
from .tensor import Tensor

RGB_MEAN = (0.4488, 0.4371, 0.4040)
UPSAMPLERS = ("pixelshuffle", "pixelshuffledirect")


@dataclass
class ModelConfig:
    scale: int = 2
    embed_dim: int = 24
    rstb_depths: list = field(default_factory=lambda: [2, 2])
    window_size: int = 6
    heads: int = 4
    mlp_ratio: float = 2.0
    block_variant: str = "SFB"
    layer_variant: str = "STL"
    upsampler: str = "pixelshuffledirect"
    upsample_features: int = 64
    negative_slope: float = 0.2

    def validate(self) -> None:
        if self.scale not in (2, 3, 4):
            raise ConfigError(f"scale must be 2, 3 or 4, got {self.scale}")
        if not self.rstb_depths or any(d < 0 for d in self.rstb_depths):
            raise ConfigError("rstb_depths needs at least one non-negative entry")
        if self.embed_dim < 1 or self.heads < 1 or self.embed_dim % self.heads:
            raise ConfigError(f"embed_dim {self.embed_dim} must be divisible by heads {self.heads}")
        if self.window_size < 1:
            raise ConfigError("window_size must be >= 1")
        if self.block_variant not in BLOCK_VARIANTS:
            raise ConfigError(f"block_variant must be one of {BLOCK_VARIANTS}")
        if self.layer_variant not in LAYER_VARIANTS:
            raise ConfigError(f"layer_variant must be one of {LAYER_VARIANTS}")
        if self.upsampler not in UPSAMPLERS:
            raise ConfigError(f"upsampler must be one of {UPSAMPLERS}")
        if self.block_variant == "HourglassSFB" and self.embed_dim % 2:
            raise ConfigError("HourglassSFB needs an even embed_dim")
        if self.mlp_ratio <= 0:
            raise ConfigError("mlp_ratio must be positive")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> ModelConfig:
        cfg = cls(**d)
        cfg.rstb_depths = [int(v) for v in cfg.rstb_depths]
        return cfg

    @classmethod
    def classical(cls, scale: int = 4) -> ModelConfig:
        return cls(scale=scale, embed_dim=180, rstb_depths=[6] * 6, window_size=12, heads=6,
                   block_variant="SFB", upsampler="pixelshuffle")

    @classmethod
    def lightweight(cls, scale: int = 2) -> ModelConfig:
        return cls(scale=scale, embed_dim=60, rstb_depths=[6, 5, 5, 6], window_size=8, heads=6,
                   block_variant="HourglassSFB", upsampler="pixelshuffledirect")

    @classmethod
    def toy(cls, scale: int = 2) -> ModelConfig:
        return cls(scale=scale)


class SwinFIR(Module):
    def __init__(self, config: ModelConfig, rng: np.random.Generator, dtype=np.float32):
        super().__init__()
        config.validate()
        self.config = config
        c, s = config.embed_dim, config.scale
        kw = dict(rng=rng, dtype=dtype)
        self.conv_first = Conv2d(3, c, 3, **kw)
        self.patch_norm = LayerNorm(c, dtype=dtype)
        self.layers = ModuleList(
            RSTB(c, d, config.heads, config.window_size, config.mlp_ratio, config.block_variant,
                 config.layer_variant, config.negative_slope, **kw)
            for d in config.rstb_depths
        )
        self.norm = LayerNorm(c, dtype=dtype)
        self.conv_after_body = Conv2d(c, c, 3, **kw)
        if config.upsampler == "pixelshuffledirect":
            self.upsample = Conv2d(c, 3 * s * s, 3, **kw)
        else:
            f = config.upsample_features
            self.conv_before_upsample = Conv2d(c, f, 3, **kw)
            stages = [(3, Conv2d(f, 9 * f, 3, **kw))] if s == 3 else [(2, Conv2d(f, 4 * f, 3, **kw)) for _ in range(s // 2)]
            self._stage_factors = [r for r, _ in stages]
            self.upsample = ModuleList(m for _, m in stages)
            self.conv_last = Conv2d(f, 3, 3, **kw)
        self.dtype = np.dtype(dtype)

    def _reconstruct(self, feat: Tensor) -> Tensor:
        cfg = self.config
        if cfg.upsampler == "pixelshuffledirect":
            return T.pixel_shuffle(self.upsample(feat), cfg.scale)
        y = T.leaky_relu(self.conv_before_upsample(feat), 0.01)
        for r, conv in zip(self._stage_factors, self.upsample):
            y = T.pixel_shuffle(conv(y), r)
        return self.conv_last(y)

    def forward(self, x, clamp: bool = False) -> Tensor:
        """``x`` is N x 3 x H x W in [0, 1]; returns N x 3 x sH x sW.

        The input is reflect-padded to a multiple of the window size and the
        output cropped back. ``clamp`` limits the output to [0, 1] (inference).
        """
        x = T.as_tensor(x, self.dtype)
        if x.ndim != 4 or x.shape[1] != 3:
            raise ShapeError(f"expected N x 3 x H x W input, got {x.shape}")
        n, _, h, w = x.shape
        ws, s = self.config.window_size, self.config.scale
        ph, pw = (-h) % ws, (-w) % ws
        x = T.pad_reflect(x, ((0, 0), (0, 0), (0, ph), (0, pw)))
        mean = np.asarray(RGB_MEAN, dtype=self.dtype).reshape(1, 3, 1, 1)
        x = T.add_bias(x, -mean)

        feat = self.conv_first(x)
        y = channel_layer_norm(feat, self.patch_norm)
        for rstb in self.layers:
            y = rstb(y)
        y = channel_layer_norm(y, self.norm)
        y = self.conv_after_body(y) + feat
        out = T.add_bias(self._reconstruct(y), mean)
        if ph or pw:
            out = out[:, :, : h * s, : w * s]
        if clamp:
            out = Tensor(np.clip(out.data, 0.0, 1.0))
        return out

    def predict(self, lr: np.ndarray) -> np.ndarray:
        """Inference on an N x 3 x H x W array: no graph, output clamped to [0, 1]."""
        with T.no_grad():
            return self.forward(np.asarray(lr, dtype=self.dtype), clamp=True).data


def build(config: ModelConfig, seed: int = 0, dtype=np.float32) -> SwinFIR:
    """Instantiate a model with parameters drawn deterministically from ``seed``."""
    return SwinFIR(config, np.random.default_rng(seed), dtype=dtype)


def forward(model: SwinFIR, lr_image, clamp: bool = False) -> Tensor:
    return model(lr_image, clamp=clamp)


def count_params(model: Module, exclude_position_bias: bool = False) -> int:
    """Number of scalar parameters.

    ``exclude_position_bias`` drops the relative-position bias tables, which is
    the convention behind published parameter counts for Swin-based SR models.
    """
    return sum(
        p.size for name, p in model.named_parameters()
        if not (exclude_position_bias and name.endswith("relative_position_bias_table"))
    )
