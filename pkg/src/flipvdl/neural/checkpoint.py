"""Binary model checkpoints.

Layout (little-endian)::

    4 bytes   magic b"VDLN"
    uint32    format version
    uint32    descriptor length in bytes
    ...       descriptor, UTF-8 JSON: architecture plus an ordered list of
              {"key", "shape", "dtype"} for the parameter arrays
    ...       raw parameter arrays in descriptor order, C order

A JSON sidecar (``<name>.json``) holds normalisation statistics, seed and
training config.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"VDLN"
VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, architecture: dict, arrays: dict, sidecar: dict | None = None) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    entries = []
    blobs = []
    for key, arr in arrays.items():
        arr = np.ascontiguousarray(arr)
        dt = arr.dtype.newbyteorder("<")
        entries.append({"key": key, "shape": list(arr.shape), "dtype": dt.str})
        blobs.append(arr.astype(dt, copy=False).tobytes(order="C"))
    desc = json.dumps({"architecture": architecture, "arrays": entries}, sort_keys=True).encode("utf-8")
    with path.open("wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(desc)))
        fh.write(desc)
        for blob in blobs:
            fh.write(blob)
    if sidecar is not None:
        sidecar_path(path).write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n")


def sidecar_path(path) -> Path:
    path = Path(path)
    return path.with_suffix(".json")


def load_checkpoint(path) -> tuple:
    """Return ``(architecture, arrays, sidecar)``; sidecar is None when absent."""
    path = Path(path)
    data = path.read_bytes()
    if data[:4] != MAGIC:
        raise CheckpointError(f"{path}: not a model checkpoint")
    version, n = struct.unpack("<II", data[4:12])
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    desc = json.loads(data[12 : 12 + n].decode("utf-8"))
    offset = 12 + n
    arrays = {}
    for e in desc["arrays"]:
        dt = np.dtype(e["dtype"])
        count = int(np.prod(e["shape"])) if e["shape"] else 1
        size = count * dt.itemsize
        if offset + size > len(data):
            raise CheckpointError(f"{path}: truncated checkpoint")
        arrays[e["key"]] = np.frombuffer(data, dtype=dt, count=count, offset=offset).reshape(e["shape"]).copy()
        offset += size
    if offset != len(data):
        raise CheckpointError(f"{path}: trailing bytes after parameters")
    side = sidecar_path(path)
    sidecar = json.loads(side.read_text()) if side.exists() else None
    return desc["architecture"], arrays, sidecar
