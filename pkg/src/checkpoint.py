# src/checkpoint.py
# Binary checkpoint: magic "BIMK1", u32 tensor count, then per tensor a u16-length UTF-8
# name, u8 rank, rank x u32 extents and little-endian float32 data; a trailing u32-length
# block of UTF-8 key=value metadata lines. All integers little-endian.
from __future__ import annotations

import logging
import struct
from dataclasses import dataclass, field

import numpy as np

from src.model import Model, named_tensors

logger = logging.getLogger(__name__)

MAGIC = b"BIMK1"
_LE_F32 = np.dtype("<f4")


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    tensors: dict  # name -> float32 ndarray
    metadata: dict = field(default_factory=dict)  # str -> str

    def meta_int(self, key: str, default: int = 0) -> int:
        return int(self.metadata.get(key, default))


# =========================
# Encode / decode
# =========================
def encode_checkpoint(ckpt: Checkpoint) -> bytes:
    parts = [MAGIC, struct.pack("<I", len(ckpt.tensors))]
    for name, arr in ckpt.tensors.items():
        raw = name.encode("utf-8")
        if len(raw) > 0xFFFF:
            raise CheckpointError(f"tensor name too long: {name[:40]}...")
        arr = np.asarray(arr)
        parts.append(struct.pack("<H", len(raw)) + raw)
        parts.append(struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype=_LE_F32).tobytes())
    meta = "".join(f"{k}={v}\n" for k, v in ckpt.metadata.items()).encode("utf-8")
    parts.append(struct.pack("<I", len(meta)) + meta)
    return b"".join(parts)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointError(f"truncated checkpoint: need {n} bytes at offset {self.pos}, have {len(self.data) - self.pos}")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def decode_checkpoint(data: bytes) -> Checkpoint:
    r = _Reader(data)
    if r.take(len(MAGIC)) != MAGIC:
        raise CheckpointError("not a checkpoint (bad magic)")
    (count,) = r.unpack("<I")
    tensors = {}
    for _ in range(count):
        (n,) = r.unpack("<H")
        name = r.take(n).decode("utf-8")
        (rank,) = r.unpack("<B")
        shape = r.unpack(f"<{rank}I") if rank else ()
        size = int(np.prod(shape, dtype=np.int64)) if rank else 1
        arr = np.frombuffer(r.take(size * 4), dtype=_LE_F32).astype(np.float32).reshape(shape)
        if name in tensors:
            raise CheckpointError(f"duplicate tensor '{name}'")
        tensors[name] = arr
    metadata = {}
    if r.pos < len(data):
        (n,) = r.unpack("<I")
        for line in r.take(n).decode("utf-8").splitlines():
            if line:
                key, _, value = line.partition("=")
                metadata[key] = value
    if r.pos != len(data):
        raise CheckpointError(f"{len(data) - r.pos} trailing bytes after checkpoint")
    return Checkpoint(tensors, metadata)


# =========================
# Model <-> file
# =========================
def snapshot(model: Model, **metadata) -> Checkpoint:
    tensors = {name: t.data.astype(np.float32) for name, t in named_tensors(model).items()}
    meta = {"n_classes": model.n_classes, "seed": model.config.seed, **metadata}
    return Checkpoint(tensors, {k: str(v) for k, v in meta.items()})


def save_checkpoint(path, model: Model, **metadata) -> Checkpoint:
    ckpt = snapshot(model, **metadata)
    with open(path, "wb") as f:
        f.write(encode_checkpoint(ckpt))
    logger.info("checkpoint saved: %s (%d tensors)", path, len(ckpt.tensors))
    return ckpt


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as f:
        ckpt = decode_checkpoint(f.read())
    logger.info("checkpoint loaded: %s (%d tensors)", path, len(ckpt.tensors))
    return ckpt


def restore(model: Model, ckpt: Checkpoint) -> Model:
    """Copy checkpoint tensors into the model in place; names and shapes must match exactly."""
    if "n_classes" in ckpt.metadata and ckpt.meta_int("n_classes") != model.n_classes:
        raise CheckpointError(f"checkpoint has {ckpt.metadata['n_classes']} classes, model {model.n_classes}")
    targets = named_tensors(model)
    unknown = sorted(set(ckpt.tensors) - set(targets))
    missing = sorted(set(targets) - set(ckpt.tensors))
    if unknown:
        raise CheckpointError(f"checkpoint tensor '{unknown[0]}' has no place in the model")
    if missing:
        raise CheckpointError(f"checkpoint lacks tensor '{missing[0]}'")
    for name, t in targets.items():
        arr = ckpt.tensors[name]
        if arr.shape != t.shape:
            raise CheckpointError(f"tensor '{name}': checkpoint shape {arr.shape}, model shape {t.shape}")
        t.data = arr.astype(t.dtype)
    return model
