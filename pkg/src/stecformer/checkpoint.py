"""Flat binary parameter checkpoints.

Layout (all integers little-endian)::

    magic      8 bytes   b"STECKPT1"
    count      uint32    number of entries
    entry * count:
        name_len  uint32
        name      name_len bytes, UTF-8 parameter path (e.g. "stages.0.head.weight")
        ndim      uint32
        dims      ndim * uint64
        data      prod(dims) * float64, little-endian, row-major

Entries appear in the model's parameter order. A JSON sidecar with the same
stem and a ``.json`` suffix holds the model config.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"STECKPT1"


def save_checkpoint(path, state: dict[str, np.ndarray]) -> None:
    chunks = [MAGIC, struct.pack("<I", len(state))]
    for name, arr in state.items():
        arr = np.asarray(arr, dtype="<f8", order="C")
        raw = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(raw)))
        chunks.append(raw)
        chunks.append(struct.pack("<I", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        chunks.append(arr.tobytes())
    Path(path).write_bytes(b"".join(chunks))


def load_checkpoint(path) -> dict[str, np.ndarray]:
    buf = Path(path).read_bytes()
    if buf[:8] != MAGIC:
        raise ValueError(f"{path}: not a checkpoint (bad magic)")
    pos = 8
    (count,) = struct.unpack_from("<I", buf, pos)
    pos += 4
    state = {}
    for _ in range(count):
        (n,) = struct.unpack_from("<I", buf, pos)
        pos += 4
        name = buf[pos:pos + n].decode("utf-8")
        pos += n
        (ndim,) = struct.unpack_from("<I", buf, pos)
        pos += 4
        dims = struct.unpack_from(f"<{ndim}Q", buf, pos)
        pos += 8 * ndim
        size = int(np.prod(dims)) if ndim else 1
        arr = np.frombuffer(buf, dtype="<f8", count=size, offset=pos).reshape(dims)
        pos += 8 * size
        state[name] = arr.astype(np.float64)
    if pos != len(buf):
        raise ValueError(f"{path}: {len(buf) - pos} trailing bytes")
    return state


def save_model(path, model) -> None:
    path = Path(path)
    save_checkpoint(path, model.state_dict())
    path.with_suffix(".json").write_text(json.dumps(model.cfg.to_dict(), indent=2))


def load_model(path, seed: int = 0):
    from .model import ModelConfig, Stecformer

    path = Path(path)
    cfg = ModelConfig.from_dict(json.loads(path.with_suffix(".json").read_text()))
    model = Stecformer(cfg, seed=seed)
    model.load_state_dict(load_checkpoint(path))
    return model
