"""Checkpoint files: a text manifest followed by raw little-endian floats.

Layout::

    spectramba-checkpoint 1
    meta <key> <value>                       (zero or more)
    tensor <name> <dtype> <d0,d1,...> <offset> <nbytes>
    ...
    end
    <payload bytes>

Offsets are relative to the first payload byte.
"""

from __future__ import annotations

import hashlib
from collections import OrderedDict
from pathlib import Path

import numpy as np

MAGIC = "spectramba-checkpoint 1"
_DTYPES = {"float32": "<f4", "float64": "<f8"}


class CheckpointError(ValueError):
    pass


def save(path, tensors, meta=None):
    """Write named arrays (and optional string metadata) to ``path``."""
    lines = [MAGIC]
    for k, v in (meta or {}).items():
        if any(c.isspace() for c in str(k)) or "\n" in str(v):
            raise CheckpointError(f"metadata key/value not representable: {k!r}")
        lines.append(f"meta {k} {v}")
    payload = []
    offset = 0
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        dt = arr.dtype.name
        if dt not in _DTYPES:
            raise CheckpointError(f"tensor {name}: unsupported dtype {dt}")
        if any(c.isspace() for c in name):
            raise CheckpointError(f"tensor name contains whitespace: {name!r}")
        raw = np.ascontiguousarray(arr, dtype=_DTYPES[dt]).tobytes()
        shape = ",".join(str(d) for d in arr.shape) or "-"
        lines.append(f"tensor {name} {dt} {shape} {offset} {len(raw)}")
        payload.append(raw)
        offset += len(raw)
    lines.append("end")
    Path(path).write_bytes(("\n".join(lines) + "\n").encode("utf-8") + b"".join(payload))


def load(path):
    """Return ``(OrderedDict name -> array, dict meta)``."""
    blob = Path(path).read_bytes()
    pos = 0
    header = []
    while True:
        nl = blob.find(b"\n", pos)
        if nl < 0:
            raise CheckpointError(f"{path}: truncated header")
        line = blob[pos:nl].decode("utf-8")
        pos = nl + 1
        if line == "end":
            break
        header.append(line)
    if not header or header[0] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    meta, tensors = {}, OrderedDict()
    for line in header[1:]:
        kind, rest = line.split(" ", 1)
        if kind == "meta":
            k, _, v = rest.partition(" ")
            meta[k] = v
        elif kind == "tensor":
            name, dt, shape, offset, nbytes = rest.split(" ")
            shape = () if shape == "-" else tuple(int(d) for d in shape.split(","))
            start = pos + int(offset)
            raw = blob[start: start + int(nbytes)]
            if len(raw) != int(nbytes):
                raise CheckpointError(f"{path}: payload for {name} truncated")
            arr = np.frombuffer(raw, dtype=_DTYPES[dt]).astype(dt).reshape(shape)
            tensors[name] = arr
        else:
            raise CheckpointError(f"{path}: unknown header line {line!r}")
    return tensors, meta


def file_hash(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
