"""Single-file parameter checkpoints.

Layout: an 8-byte magic, a format-version integer, the parameter count,
then one record per parameter (length-prefixed utf-8 name, dtype code,
rank, extents, raw row-major values). Round-tripping double-precision
parameters is bit-exact, so reloaded models reproduce predictions
byte-identically.
"""

from __future__ import annotations

import hashlib
import struct
from pathlib import Path

import numpy as np

MAGIC = b"GMCHKPT\x00"
FORMAT_VERSION = 1

_DTYPE_CODES = {np.dtype(np.float64): 0, np.dtype(np.float32): 1}
_CODE_DTYPES = {code: dtype for dtype, code in _DTYPE_CODES.items()}


class CheckpointError(ValueError):
    """Base class for unreadable checkpoints."""


class CorruptCheckpointError(CheckpointError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


def write_checkpoint(path, params) -> None:
    """Serialize named parameters (anything with .name and .data)."""
    path = Path(path)
    params = list(params)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", FORMAT_VERSION, len(params)))
        for p in params:
            name = p.name.encode("utf-8")
            arr = np.ascontiguousarray(p.data)
            code = _DTYPE_CODES.get(arr.dtype)
            if code is None:
                raise CheckpointError(f"unsupported dtype {arr.dtype} for {p.name!r}")
            fh.write(struct.pack("<H", len(name)))
            fh.write(name)
            fh.write(struct.pack("<BB", code, arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}q", *arr.shape))
            fh.write(arr.tobytes())


def _read_exactly(fh, n: int) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise CorruptCheckpointError("checkpoint file truncated")
    return buf


def read_checkpoint(path) -> dict[str, np.ndarray]:
    """Parse a checkpoint into a name -> array mapping."""
    path = Path(path)
    with open(path, "rb") as fh:
        if _read_exactly(fh, len(MAGIC)) != MAGIC:
            raise CorruptCheckpointError(f"{path} is not a checkpoint file")
        version, count = struct.unpack("<II", _read_exactly(fh, 8))
        if version != FORMAT_VERSION:
            raise CheckpointVersionError(
                f"unsupported checkpoint version {version} (expected {FORMAT_VERSION})")
        state: dict[str, np.ndarray] = {}
        for _ in range(count):
            (name_len,) = struct.unpack("<H", _read_exactly(fh, 2))
            name = _read_exactly(fh, name_len).decode("utf-8")
            code, ndim = struct.unpack("<BB", _read_exactly(fh, 2))
            if code not in _CODE_DTYPES:
                raise CorruptCheckpointError(f"unknown dtype code {code}")
            shape = struct.unpack(f"<{ndim}q", _read_exactly(fh, 8 * ndim))
            dtype = _CODE_DTYPES[code]
            size = int(np.prod(shape, dtype=np.int64)) if ndim else 1
            raw = _read_exactly(fh, size * dtype.itemsize)
            if name in state:
                raise CorruptCheckpointError(f"duplicate parameter {name!r}")
            state[name] = np.frombuffer(raw, dtype=dtype).reshape(shape).copy()
        if fh.read(1):
            raise CorruptCheckpointError("trailing bytes after the last parameter")
    return state


def param_fingerprints(params) -> dict[str, str]:
    """sha256 of each parameter's raw bytes (for freeze verification)."""
    return {p.name: hashlib.sha256(np.ascontiguousarray(p.data).tobytes()).hexdigest()
            for p in params}
