"""Checkpoint file format: versioned little-endian binary blocks plus the
full configuration blob.

Layout: magic ``IXCP``, u32 version, u64 JSON-config length + bytes, u64
block count, then per block a length-prefixed name, dtype tag, shape, and raw
payload.  Reload restores every parameter bit, so forward outputs are
identical across a save/load cycle.
"""

from __future__ import annotations

import json
import struct

import numpy as np
import torch

from .errors import CheckpointError

MAGIC = b"IXCP"
VERSION = 1

_DTYPE_TAGS = {"<f4": 0, "<f8": 1, "<i8": 2, "|u1": 3}
_TAG_DTYPES = {v: k for k, v in _DTYPE_TAGS.items()}


def _to_array(value) -> np.ndarray:
    if isinstance(value, torch.Tensor):
        value = value.detach().cpu().numpy()
    arr = np.asarray(value)
    if arr.dtype == np.float32:
        return arr.astype("<f4")
    if arr.dtype == np.float64:
        return arr.astype("<f8")
    if arr.dtype == np.uint8:
        return arr.astype("|u1")
    if np.issubdtype(arr.dtype, np.integer):
        return arr.astype("<i8")
    raise CheckpointError(f"unsupported block dtype {arr.dtype}")


def save_checkpoint(path: str, blocks: dict[str, object], config: dict) -> None:
    config_bytes = json.dumps(config, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<Q", len(config_bytes)))
        fh.write(config_bytes)
        fh.write(struct.pack("<Q", len(blocks)))
        for name in sorted(blocks):
            arr = _to_array(blocks[name])
            name_bytes = name.encode("utf-8")
            fh.write(struct.pack("<H", len(name_bytes)))
            fh.write(name_bytes)
            fh.write(struct.pack("<B", _DTYPE_TAGS[arr.dtype.str]))
            fh.write(struct.pack("<B", arr.ndim))
            for dim in arr.shape:
                fh.write(struct.pack("<Q", dim))
            fh.write(np.ascontiguousarray(arr).tobytes())


def load_checkpoint(path: str) -> tuple[dict[str, np.ndarray], dict]:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != MAGIC:
        raise CheckpointError(f"{path}: bad magic {data[:4]!r}")
    (version,) = struct.unpack_from("<I", data, 4)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    pos = 8
    (config_len,) = struct.unpack_from("<Q", data, pos)
    pos += 8
    config = json.loads(data[pos:pos + config_len].decode("utf-8"))
    pos += config_len
    (n_blocks,) = struct.unpack_from("<Q", data, pos)
    pos += 8
    blocks: dict[str, np.ndarray] = {}
    for _ in range(n_blocks):
        (name_len,) = struct.unpack_from("<H", data, pos)
        pos += 2
        name = data[pos:pos + name_len].decode("utf-8")
        pos += name_len
        tag, ndim = struct.unpack_from("<BB", data, pos)
        pos += 2
        shape = struct.unpack_from(f"<{ndim}Q", data, pos) if ndim else ()
        pos += 8 * ndim
        dtype = np.dtype(_TAG_DTYPES[tag])
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(data, dtype=dtype, count=count, offset=pos).reshape(shape)
        pos += count * dtype.itemsize
        blocks[name] = arr.copy()
    if pos != len(data):
        raise CheckpointError(f"{path}: {len(data) - pos} trailing bytes")
    return blocks, config
