"""Checkpoint container: magic "ECBM", a u32 format version, the model
config as length-prefixed JSON, then named float64 records.

All integers and reals are little-endian.  Records are written in sorted
name order so identical parameters produce identical bytes.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .model import ModelConfig, Theta

MAGIC = b"ECBM"
VERSION = 1


class CheckpointError(ValueError):
    """Malformed or inconsistent checkpoint file."""


def save_checkpoint(path, theta: Theta) -> None:
    blob = json.dumps(theta.config.to_dict(), sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(struct.pack("<I", len(theta.arrays)))
        for name in sorted(theta.arrays):
            arr = theta.arrays[name]
            encoded = name.encode()
            fh.write(struct.pack("<I", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<I", arr.ndim))
            for extent in arr.shape:
                fh.write(struct.pack("<Q", extent))
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def _read(fh, n: int, what: str) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise CheckpointError(f"truncated checkpoint while reading {what}")
    return data


def load_checkpoint(path) -> Theta:
    with open(path, "rb") as fh:
        if _read(fh, 4, "magic") != MAGIC:
            raise CheckpointError("not an ECBM checkpoint (bad magic)")
        (version,) = struct.unpack("<I", _read(fh, 4, "version"))
        if version != VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}")
        (blob_len,) = struct.unpack("<I", _read(fh, 4, "config length"))
        try:
            config = ModelConfig.from_dict(json.loads(_read(fh, blob_len, "config")))
        except (json.JSONDecodeError, TypeError, ValueError) as exc:
            raise CheckpointError(f"bad config block: {exc}") from exc
        (count,) = struct.unpack("<I", _read(fh, 4, "record count"))
        arrays = {}
        for i in range(count):
            (name_len,) = struct.unpack("<I", _read(fh, 4, f"record {i} name length"))
            name = _read(fh, name_len, f"record {i} name").decode()
            (ndim,) = struct.unpack("<I", _read(fh, 4, f"{name} ndim"))
            shape = tuple(
                struct.unpack("<Q", _read(fh, 8, f"{name} extent"))[0]
                for _ in range(ndim))
            total = int(np.prod(shape, dtype=np.int64)) if shape else 1
            data = _read(fh, 8 * total, f"{name} data")
            arrays[name] = np.frombuffer(data, dtype="<f8").reshape(shape).copy()
        if fh.read(1):
            raise CheckpointError("trailing bytes after the last record")
    try:
        return Theta(config, arrays)
    except ValueError as exc:
        raise CheckpointError(f"checkpoint inconsistent with its config: {exc}") from exc
