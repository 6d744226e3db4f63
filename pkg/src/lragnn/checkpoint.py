"""Versioned checkpoint container for named 2-D float64 arrays.

Layout::

    LRAGNN-CHECKPOINT
    version 1
    count <K>
    <name> <rows> <cols> <byte offset>     (K lines)
    end
    <payload: little-endian float64, row-major, arrays back to back>

Offsets are relative to the first payload byte.  Values round-trip bit-exactly.
"""

from __future__ import annotations

import os
from typing import Mapping

import numpy as np

from .errors import CompatibilityError, DimensionError
from .numerics import ParamStore

MAGIC = "LRAGNN-CHECKPOINT"
FORMAT_VERSION = 1


def save_arrays(path, arrays: Mapping[str, np.ndarray]):
    header = [MAGIC, f"version {FORMAT_VERSION}", f"count {len(arrays)}"]
    offset = 0
    blobs = []
    for name, arr in arrays.items():
        arr = np.asarray(arr, dtype="<f8")
        if arr.ndim != 2:
            raise DimensionError(f"checkpoint arrays must be 2-D; {name!r} has shape {arr.shape}")
        if not name or any(c.isspace() for c in name):
            raise ValueError(f"invalid array name {name!r}")
        header.append(f"{name} {arr.shape[0]} {arr.shape[1]} {offset}")
        blob = np.ascontiguousarray(arr).tobytes()
        blobs.append(blob)
        offset += len(blob)
    header.append("end")
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(("\n".join(header) + "\n").encode("ascii"))
        for blob in blobs:
            fh.write(blob)
    os.replace(tmp, path)


def load_arrays(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        raw = fh.read()
    lines = []
    pos = 0
    while True:
        nl = raw.find(b"\n", pos)
        if nl < 0:
            raise CompatibilityError(f"{path}: truncated checkpoint header")
        lines.append(raw[pos:nl].decode("ascii"))
        pos = nl + 1
        if lines[-1] == "end":
            break
    if lines[0] != MAGIC:
        raise CompatibilityError(f"{path}: not a checkpoint file")
    version = int(lines[1].split()[1])
    if version != FORMAT_VERSION:
        raise CompatibilityError(f"{path}: unsupported checkpoint version {version}")
    count = int(lines[2].split()[1])
    entries = lines[3:-1]
    if len(entries) != count:
        raise CompatibilityError(f"{path}: header lists {len(entries)} arrays, expected {count}")
    payload = raw[pos:]
    out = {}
    for entry in entries:
        name, rows, cols, offset = entry.split()
        rows, cols, offset = int(rows), int(cols), int(offset)
        nbytes = rows * cols * 8
        if offset + nbytes > len(payload):
            raise CompatibilityError(f"{path}: payload too short for {name!r}")
        out[name] = np.frombuffer(payload, dtype="<f8", count=rows * cols,
                                  offset=offset).reshape(rows, cols).astype(np.float64)
    return out


def save_store(path, store: ParamStore):
    save_arrays(path, {name: p.value for name, p in store.items()})


def load_store(path, store: ParamStore) -> ParamStore:
    store.load_values(load_arrays(path))
    return store
