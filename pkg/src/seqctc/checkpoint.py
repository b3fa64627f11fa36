"""Versioned binary container for named float64 arrays plus JSON metadata.

Layout (all integers little-endian):

    magic   4 bytes  b"SCTC"
    version u32      currently 1
    u64              metadata byte length
    bytes            canonical JSON (sorted keys, no whitespace), UTF-8
    u64              array count
    per array, in sorted name order:
        u16          name byte length
        bytes        name, UTF-8
        u8           ndim
        u64 * ndim   dimension sizes
        f64 * prod   row-major little-endian values

Writing the same metadata and arrays twice yields byte-identical files;
loading restores bit-exact values.
"""
from __future__ import annotations

import json
import struct

import numpy as np

from .errors import CheckpointError

MAGIC = b"SCTC"
VERSION = 1


def save_container(path, metadata: dict, arrays: dict) -> None:
    meta_bytes = json.dumps(metadata, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<Q", len(meta_bytes)))
        fh.write(meta_bytes)
        fh.write(struct.pack("<Q", len(arrays)))
        for name in sorted(arrays):
            arr = np.asarray(arrays[name], dtype="<f8", order="C")
            name_bytes = name.encode("utf-8")
            if len(name_bytes) > 0xFFFF:
                raise CheckpointError(f"array name too long: {name[:40]}...")
            fh.write(struct.pack("<H", len(name_bytes)))
            fh.write(name_bytes)
            fh.write(struct.pack("<B", arr.ndim))
            for dim in arr.shape:
                fh.write(struct.pack("<Q", dim))
            fh.write(arr.tobytes())


def _read_exact(fh, count, what):
    data = fh.read(count)
    if len(data) != count:
        raise CheckpointError(f"truncated container while reading {what}")
    return data


def load_container(path):
    """Returns (metadata, dict of name -> float64 array)."""
    with open(path, "rb") as fh:
        if _read_exact(fh, 4, "magic") != MAGIC:
            raise CheckpointError(f"{path} is not a checkpoint container (bad magic)")
        (version,) = struct.unpack("<I", _read_exact(fh, 4, "version"))
        if version != VERSION:
            raise CheckpointError(f"unsupported container version {version}")
        (meta_len,) = struct.unpack("<Q", _read_exact(fh, 8, "metadata length"))
        try:
            metadata = json.loads(_read_exact(fh, meta_len, "metadata").decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as e:
            raise CheckpointError(f"corrupt container metadata: {e}") from None
        (count,) = struct.unpack("<Q", _read_exact(fh, 8, "array count"))
        arrays = {}
        for _ in range(count):
            (name_len,) = struct.unpack("<H", _read_exact(fh, 2, "array name length"))
            name = _read_exact(fh, name_len, "array name").decode("utf-8")
            (ndim,) = struct.unpack("<B", _read_exact(fh, 1, "array rank"))
            shape = tuple(
                struct.unpack("<Q", _read_exact(fh, 8, "array dim"))[0] for _ in range(ndim)
            )
            n_values = 1
            for dim in shape:
                n_values *= dim
            raw = _read_exact(fh, 8 * n_values, f"array {name!r} data")
            arrays[name] = np.frombuffer(raw, dtype="<f8").reshape(shape).copy()
        trailing = fh.read(1)
        if trailing:
            raise CheckpointError("trailing bytes after final array")
    return metadata, arrays
