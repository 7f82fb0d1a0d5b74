"""Binary checkpoint format.

Layout (all integers unsigned 32-bit little-endian)::

    b"SLNS" | version | config_len | config JSON (UTF-8)
    then for every parameter tensor, in model order:
    rank | extent * rank | float32 little-endian data

The config JSON carries the model config and the training metadata.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import (
    CheckpointMismatchError,
    CheckpointVersionError,
    ModelConfigError,
    NotACheckpointError,
    TruncatedCheckpointError,
)
from .nn import Model, ModelConfig

MAGIC = b"SLNS"
VERSION = 1


def checkpoint_bytes(model: Model) -> bytes:
    header = json.dumps(
        {"model_config": model.config.to_dict(), "metadata": model.metadata}, sort_keys=True
    ).encode("utf-8")
    parts = [MAGIC, struct.pack("<II", VERSION, len(header)), header]
    for p in model.parameters():
        parts.append(struct.pack(f"<{1 + p.ndim}I", p.ndim, *p.shape))
        parts.append(np.ascontiguousarray(p, dtype="<f4").tobytes())
    return b"".join(parts)


def save_checkpoint(model: Model, path) -> None:
    Path(path).write_bytes(checkpoint_bytes(model))


class _Reader:
    def __init__(self, data: bytes, path):
        self.data, self.pos, self.path = data, 0, path

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.data):
            raise TruncatedCheckpointError(f"{self.path}: truncated while reading {what}")
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def u32(self, what: str) -> int:
        return struct.unpack("<I", self.take(4, what))[0]


def model_from_bytes(data: bytes, source="<bytes>", num_classes: int | None = None) -> Model:
    r = _Reader(data, source)
    if len(data) < 4 and MAGIC.startswith(data):
        raise TruncatedCheckpointError(f"{source}: truncated checkpoint ({len(data)} bytes)")
    if data[:4] != MAGIC:
        raise NotACheckpointError(f"{source}: not a checkpoint (bad magic bytes)")
    r.pos = 4
    version = r.u32("version")
    if version != VERSION:
        raise CheckpointVersionError(f"{source}: unsupported checkpoint version {version} (expected {VERSION})")
    header_len = r.u32("config length")
    try:
        header = json.loads(r.take(header_len, "config").decode("utf-8"))
        config = ModelConfig.from_dict(header["model_config"])
    except (UnicodeDecodeError, json.JSONDecodeError, KeyError) as exc:
        raise ModelConfigError(f"{source}: unreadable checkpoint config: {exc}") from None
    if num_classes is not None and config.num_classes != num_classes:
        raise CheckpointMismatchError(
            f"{source}: checkpoint has {config.num_classes} classes, expected {num_classes}"
        )
    model = Model(config)
    model.metadata = header.get("metadata", {})
    for name, param in model.named_parameters():
        rank = r.u32(f"rank of {name}")
        shape = struct.unpack(f"<{rank}I", r.take(4 * rank, f"extents of {name}"))
        if shape != param.shape:
            raise CheckpointMismatchError(f"{source}: tensor {name} has shape {shape}, config implies {param.shape}")
        raw = r.take(4 * param.size, f"data of {name}")
        param[...] = np.frombuffer(raw, dtype="<f4").reshape(shape)
    if r.pos != len(data):
        raise CheckpointMismatchError(f"{source}: {len(data) - r.pos} trailing bytes after last tensor")
    return model


def load_checkpoint(path, num_classes: int | None = None) -> Model:
    return model_from_bytes(Path(path).read_bytes(), path, num_classes)
