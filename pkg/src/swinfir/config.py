"""Run configuration and its plain-text file format.

A run file is an INI-style list of ``key = value`` lines grouped in sections::

    [run]
    seed = 0
    out_dir = runs/toy
    batch_size = 4

    [model]
    embed_dim = 24
    rstb_depths = 2, 2

    [data]
    train_dir = data/train
    val_dir = data/val

Sections: ``run``, ``model``, ``schedule``, ``augment``, ``loss``, ``data``.
Every key must be a field of the matching dataclass; anything else is
rejected with the offending section and key, so a typo never falls back to
a default silently. Relative paths resolve against the file's directory.
"""
from __future__ import annotations

import configparser
import dataclasses
import os
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError
from .model import ModelConfig
from .trainops import AugmentConfig, LossConfig, TrainSchedule


@dataclass
class DataConfig:
    train_dir: str = ""
    val_dir: str = ""
    synth_lr: bool = True


@dataclass
class RunConfig:
    seed: int
    out_dir: str = "runs/default"
    batch_size: int = 4
    lr_patch: int = 24
    eval_every: int = 500
    keep_top_k: int = 4
    dtype: str = "float32"
    model: ModelConfig = field(default_factory=ModelConfig)
    schedule: TrainSchedule = field(default_factory=TrainSchedule)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    data: DataConfig = field(default_factory=DataConfig)

    def validate(self, check_paths: bool = True) -> None:
        if not isinstance(self.seed, int) or isinstance(self.seed, bool):
            raise ConfigError("run.seed is mandatory and must be an integer")
        for name in ("batch_size", "lr_patch", "eval_every", "keep_top_k"):
            if getattr(self, name) < 1:
                raise ConfigError(f"run.{name} must be >= 1")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError("run.dtype must be float32 or float64")
        self.model.validate()
        self.schedule.validate()
        self.augment.validate()
        self.loss.validate()
        if check_paths:
            for key in ("train_dir", "val_dir"):
                p = getattr(self.data, key)
                if not p or not Path(p).is_dir():
                    raise ConfigError(f"data.{key} = {p!r} is not an existing directory")


_SECTIONS = ("model", "schedule", "augment", "loss", "data")


def _convert(raw: str, default, where: str):
    try:
        if isinstance(default, bool):
            low = raw.strip().lower()
            if low in ("true", "yes", "1", "on"):
                return True
            if low in ("false", "no", "0", "off"):
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, list):
            items = [v.strip() for v in raw.split(",") if v.strip()]
            kind = type(default[0]) if default else int
            return [kind(float(v)) if kind is int else kind(v) for v in items]
        return raw.strip()
    except ValueError:
        raise ConfigError(f"{where}: cannot parse {raw!r} as {type(default).__name__}") from None


def _field_default(f: dataclasses.Field):
    if f.default is not dataclasses.MISSING:
        return f.default
    if f.default_factory is not dataclasses.MISSING:
        return f.default_factory()
    return 0  # mandatory scalar fields (seed) are integers


def _fill(cls, items: dict, section: str):
    fields = {f.name: f for f in dataclasses.fields(cls) if f.name not in _SECTIONS}
    values = {}
    for key, raw in items.items():
        if key not in fields:
            raise ConfigError(f"unknown key {section}.{key} (allowed: {', '.join(sorted(fields))})")
        values[key] = _convert(raw, _field_default(fields[key]), f"{section}.{key}")
    return values


def _read(text: str) -> configparser.ConfigParser:
    cp = configparser.ConfigParser(interpolation=None, delimiters=("=",), comment_prefixes=("#", ";"),
                                   inline_comment_prefixes=("#",))
    cp.optionxform = str  # keys are case sensitive
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from exc
    unknown = [s for s in cp.sections() if s not in ("run",) + _SECTIONS]
    if unknown:
        raise ConfigError(f"unknown section [{unknown[0]}]")
    return cp


def parse_run_config(text: str, base_dir=".") -> RunConfig:
    """Parse run-file text; relative data/output paths are resolved against ``base_dir``."""
    cp = _read(text)
    if "run" not in cp or "seed" not in cp["run"]:
        raise ConfigError("run.seed is mandatory")
    kinds = {"model": ModelConfig, "schedule": TrainSchedule, "augment": AugmentConfig,
             "loss": LossConfig, "data": DataConfig}
    parts = {}
    for name, cls in kinds.items():
        items = dict(cp[name]) if name in cp else {}
        parts[name] = cls(**_fill(cls, items, name))
    run = RunConfig(**_fill(RunConfig, dict(cp["run"]), "run"), **parts)
    base = Path(base_dir)
    for key in ("train_dir", "val_dir"):
        p = getattr(run.data, key)
        if p and not Path(p).is_absolute():
            setattr(run.data, key, os.path.normpath(base / p))
    if not Path(run.out_dir).is_absolute():
        run.out_dir = os.path.normpath(base / run.out_dir)
    return run


def load_run_config(path, check_paths: bool = True) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    run = parse_run_config(text, path.parent)
    run.validate(check_paths=check_paths)
    return run


def _format(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (list, tuple)):
        return ", ".join(_format(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def dump_run_config(run: RunConfig) -> str:
    """Serialise to the run-file format; ``parse_run_config(dump_run_config(r))`` equals ``r``."""
    lines = ["[run]"]
    for f in dataclasses.fields(RunConfig):
        if f.name not in _SECTIONS:
            lines.append(f"{f.name} = {_format(getattr(run, f.name))}")
    for name in _SECTIONS:
        lines += ["", f"[{name}]"]
        part = getattr(run, name)
        for f in dataclasses.fields(part):
            lines.append(f"{f.name} = {_format(getattr(part, f.name))}")
    return "\n".join(lines) + "\n"


def load_model_config(path) -> ModelConfig:
    """Read only the ``[model]`` section of a run file (no seed or data paths needed)."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    cp = _read(text)
    cfg = ModelConfig(**_fill(ModelConfig, dict(cp["model"]) if "model" in cp else {}, "model"))
    cfg.validate()
    return cfg
