"""Checkpoint container and its binary file format.

Layout::

    b"SWFIRCKP"                 8-byte magic
    uint64 little-endian        manifest length in bytes
    manifest                    UTF-8 JSON
    data                        concatenated little-endian float32 arrays

The manifest holds ``format_version``, the model config, the iteration
counter, and ordered descriptors ``{name, shape, offset, nbytes}`` for the
parameters (``params``) and optional optimiser moments (``optimizer``).
Offsets count from the start of the data section and are contiguous.
"""
from __future__ import annotations

import json
import struct
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import atomic_write_bytes
from .errors import CheckpointError
from .model import ModelConfig, SwinFIR, build

MAGIC = b"SWFIRCKP"
FORMAT_VERSION = 1
_DTYPE = np.dtype("<f4")


@dataclass
class Checkpoint:
    config: dict
    params: "OrderedDict[str, np.ndarray]"
    iteration: int = 0
    optimizer: "OrderedDict[str, np.ndarray]" = field(default_factory=OrderedDict)
    optimizer_step: int = 0
    meta: dict = field(default_factory=dict)

    def manifest(self) -> list[tuple[str, tuple]]:
        return [(k, tuple(v.shape)) for k, v in self.params.items()]

    @classmethod
    def from_model(cls, model: SwinFIR, iteration: int = 0, adam=None, meta=None) -> Checkpoint:
        opt = OrderedDict()
        step = 0
        if adam is not None:
            names = [k for k, _ in model.named_parameters()]
            for k, m, v in zip(names, adam.m, adam.v):
                opt["m." + k] = m.copy()
                opt["v." + k] = v.copy()
            step = adam.t
        return cls(model.config.to_dict(), model.state_dict(), iteration, opt, step, dict(meta or {}))

    def to_model(self, dtype=np.float32) -> SwinFIR:
        model = build(ModelConfig.from_dict(self.config), seed=0, dtype=dtype)
        try:
            model.load_state_dict(self.params)
        except (KeyError, ValueError) as exc:
            raise CheckpointError(f"checkpoint does not match its config: {exc}") from exc
        return model

    def to_bytes(self) -> bytes:
        blobs, offset = [], 0

        def describe(arrays):
            nonlocal offset
            out = []
            for name, arr in arrays.items():
                raw = np.ascontiguousarray(arr, dtype=_DTYPE).tobytes()
                out.append({"name": name, "shape": list(arr.shape), "offset": offset, "nbytes": len(raw)})
                blobs.append(raw)
                offset += len(raw)
            return out

        manifest = {
            "format_version": FORMAT_VERSION,
            "dtype": "float32-le",
            "config": self.config,
            "iteration": int(self.iteration),
            "params": describe(self.params),
            "optimizer": describe(self.optimizer),
            "optimizer_step": int(self.optimizer_step),
            "meta": self.meta,
        }
        head = json.dumps(manifest, sort_keys=True).encode("utf-8")
        return MAGIC + struct.pack("<Q", len(head)) + head + b"".join(blobs)

    @classmethod
    def from_bytes(cls, payload: bytes) -> Checkpoint:
        if payload[:8] != MAGIC or len(payload) < 16:
            raise CheckpointError("not a checkpoint file (bad magic)")
        (n,) = struct.unpack("<Q", payload[8:16])
        try:
            manifest = json.loads(payload[16:16 + n].decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise CheckpointError(f"corrupt manifest: {exc}") from exc
        if manifest.get("format_version") != FORMAT_VERSION:
            raise CheckpointError(f"unsupported checkpoint version {manifest.get('format_version')}")
        data = memoryview(payload)[16 + n:]
        expected = 0

        def read(entries):
            nonlocal expected
            out = OrderedDict()
            for e in entries:
                shape = tuple(e["shape"])
                nbytes = int(np.prod(shape, dtype=np.int64)) * _DTYPE.itemsize
                if e["offset"] != expected or e["nbytes"] != nbytes or e["offset"] + nbytes > len(data):
                    raise CheckpointError(f"bad descriptor for {e['name']}")
                arr = np.frombuffer(data[e["offset"]:e["offset"] + nbytes], dtype=_DTYPE).reshape(shape)
                out[e["name"]] = arr.astype(np.float32)
                expected += nbytes
            return out

        params = read(manifest["params"])
        opt = read(manifest["optimizer"])
        if expected != len(data):
            raise CheckpointError("trailing bytes after the last array")
        return cls(manifest["config"], params, manifest["iteration"], opt, manifest["optimizer_step"],
                   manifest.get("meta", {}))


def save(path, ckpt: Checkpoint) -> Path:
    """Write atomically (temp file, then rename)."""
    atomic_write_bytes(path, ckpt.to_bytes())
    return Path(path)


def load(path) -> Checkpoint:
    try:
        payload = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    return Checkpoint.from_bytes(payload)
