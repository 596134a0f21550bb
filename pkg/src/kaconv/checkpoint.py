"""Versioned binary checkpoints.

One file holds a JSON metadata blob (run config, epoch, seed, optimizer
step) followed by named tensors in insertion order. The format is
deliberately dumb: fixed magic, explicit version, length-prefixed
records, little-endian throughout. Anything that can be checked cheaply
on read is checked; a bad magic or unknown version is a FormatError, a
short file is a DataError.

Saving what load_checkpoint returned reproduces the original file byte
for byte. That property is load-bearing: the resume test and the
determinism audit both compare checkpoint files directly.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import DataError, FormatError

MAGIC = b"KACV"
VERSION = 1


def _le(dtype: np.dtype) -> np.dtype:
    # '=' and '|' are already unambiguous on disk; '>' must be swapped.
    if dtype.byteorder == ">":
        return dtype.newbyteorder("<")
    return dtype


def save_checkpoint(path: str | Path, tensors: dict[str, np.ndarray], meta: dict) -> None:
    path = Path(path)
    meta_blob = json.dumps(meta, sort_keys=True).encode("utf-8")
    out = [MAGIC, struct.pack("<I", VERSION)]
    out.append(struct.pack("<I", len(meta_blob)))
    out.append(meta_blob)
    out.append(struct.pack("<I", len(tensors)))
    for name, arr in tensors.items():
        arr = np.asarray(arr, order="C")  # keeps 0-d rank, unlike ascontiguousarray
        if arr.dtype.byteorder == ">":
            arr = arr.astype(_le(arr.dtype))
        name_b = name.encode("utf-8")
        dtype_b = arr.dtype.str.encode("ascii")
        out.append(struct.pack("<I", len(name_b)))
        out.append(name_b)
        out.append(struct.pack("<I", len(dtype_b)))
        out.append(dtype_b)
        out.append(struct.pack("<I", arr.ndim))
        out.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        out.append(arr.tobytes())
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(b"".join(out))
    tmp.replace(path)  # atomic on the same filesystem


class _Reader:
    def __init__(self, blob: bytes, path: Path):
        self.blob = blob
        self.pos = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.blob):
            raise DataError(
                f"{self.path}: truncated at byte {self.pos} (wanted {n} more)"
            )
        chunk = self.blob[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]


def load_checkpoint(path: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    path = Path(path)
    r = _Reader(path.read_bytes(), path)
    magic = r.take(4)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}, not a checkpoint")
    version = r.u32()
    if version != VERSION:
        raise FormatError(f"{path}: version {version}, this build reads {VERSION}")
    meta = json.loads(r.take(r.u32()).decode("utf-8"))
    tensors: dict[str, np.ndarray] = {}
    for _ in range(r.u32()):
        name = r.take(r.u32()).decode("utf-8")
        dtype = np.dtype(r.take(r.u32()).decode("ascii"))
        tensors[name] = _read_tensor_body(r, dtype)
    if r.pos != len(r.blob):
        raise FormatError(f"{path}: {len(r.blob) - r.pos} trailing bytes")
    return tensors, meta


def _read_tensor_body(r: _Reader, dtype: np.dtype) -> np.ndarray:
    ndim = r.u32()
    shape = struct.unpack(f"<{ndim}I", r.take(4 * ndim))
    count = int(np.prod(shape, dtype=np.int64)) if ndim else 1
    payload = r.take(count * dtype.itemsize)
    # copy: frombuffer views are read-only, training mutates in place
    return np.frombuffer(payload, dtype=dtype).reshape(shape).copy()
