"""Versioned checkpoint container.

Layout (stable across releases, also documented in the README):

    bytes 0..7    magic ``b"INKLINE\\0"``
    bytes 8..11   header length ``n`` as little-endian uint32
    bytes 12..12+n  UTF-8 JSON header::

        {
          "format_version": 1,
          "config": {...},                     # arbitrary model-config record
          "tensors": [
            {"id": "G/block0/conv/weight", "dtype": "<f4",
             "shape": [48, 32, 3, 3], "offset": 0},
            ...
          ]
        }

    remaining     raw little-endian tensor payloads at the stated offsets

Offsets are relative to the end of the header.  Only little-endian float32
("<f4") and float64 ("<f8") payloads are produced.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

MAGIC = b"INKLINE\0"
FORMAT_VERSION = 1

_DTYPES = {"<f4": np.dtype("<f4"), "<f8": np.dtype("<f8")}


class CheckpointError(RuntimeError):
    pass


def save_checkpoint(path, tensors: dict[str, np.ndarray], config: dict):
    """Write ``Parameter.id -> array`` plus a model-config record."""
    entries = []
    payload = bytearray()
    for tid in sorted(tensors):
        arr = np.asarray(tensors[tid])
        if arr.dtype == np.float64:
            code = "<f8"
        else:
            code = "<f4"
        raw = np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes()
        entries.append({"id": tid, "dtype": code, "shape": list(arr.shape), "offset": len(payload)})
        payload.extend(raw)
    header = json.dumps(
        {"format_version": FORMAT_VERSION, "config": config, "tensors": entries},
        sort_keys=True,
    ).encode("utf-8")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(len(header).to_bytes(4, "little"))
        f.write(header)
        f.write(bytes(payload))


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    """Read a checkpoint; returns (tensors by id, config record)."""
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:8] != MAGIC:
        raise CheckpointError(f"{path}: not an inkline checkpoint")
    hlen = int.from_bytes(blob[8:12], "little")
    header = json.loads(blob[12:12 + hlen].decode("utf-8"))
    if header.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported format version {header.get('format_version')}")
    base = 12 + hlen
    tensors = {}
    for e in header["tensors"]:
        dt = _DTYPES[e["dtype"]]
        shape = tuple(e["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = base + e["offset"]
        arr = np.frombuffer(blob, dtype=dt, count=count, offset=start).reshape(shape)
        tensors[e["id"]] = arr.astype(arr.dtype.newbyteorder("="))
    return tensors, header["config"]
