"""Binary checkpoint container for named float64 tensors.

Layout, all integers little-endian:

    bytes  0..7   magic string "FPTCKPT1"
    bytes  8..15  uint64 tensor count
    per tensor, in ascending name order:
        uint32          byte length of the UTF-8 name
        name bytes
        uint32          number of dimensions
        uint64 * ndim   extents
        float64 * prod  row-major data, little-endian

Round-trips are bit-exact; loading preserves file order.
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import Mapping

import numpy as np

from .exceptions import CheckpointError
from .tensor import ParamStore

MAGIC = b"FPTCKPT1"


def _tensor_dict(source) -> dict[str, np.ndarray]:
    if isinstance(source, ParamStore):
        return source.snapshot()
    return {name: np.asarray(value, dtype=np.float64) for name, value in source.items()}


def save_checkpoint(path, source: Mapping[str, np.ndarray] | ParamStore) -> None:
    tensors = _tensor_dict(source)
    chunks = [MAGIC, struct.pack("<Q", len(tensors))]
    for name in sorted(tensors):
        # not ascontiguousarray: that would promote 0-d scalars to shape (1,)
        arr = np.asarray(tensors[name], dtype="<f8")
        encoded = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack("<I", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        chunks.append(arr.tobytes(order="C"))
    Path(path).write_bytes(b"".join(chunks))


class _Reader:
    def __init__(self, blob: bytes):
        self.blob = blob
        self.pos = 0

    def take(self, count: int) -> bytes:
        if self.pos + count > len(self.blob):
            raise CheckpointError("checkpoint truncated")
        out = self.blob[self.pos : self.pos + count]
        self.pos += count
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def u64(self) -> int:
        return struct.unpack("<Q", self.take(8))[0]


def load_checkpoint(path) -> dict[str, np.ndarray]:
    reader = _Reader(Path(path).read_bytes())
    if reader.take(len(MAGIC)) != MAGIC:
        raise CheckpointError(f"bad magic; not a checkpoint file: {path}")
    count = reader.u64()
    tensors: dict[str, np.ndarray] = {}
    for _ in range(count):
        name = reader.take(reader.u32()).decode("utf-8")
        ndim = reader.u32()
        shape = tuple(reader.u64() for _ in range(ndim))
        n_values = 1
        for extent in shape:
            n_values *= extent
        raw = reader.take(8 * n_values)
        tensors[name] = np.frombuffer(raw, dtype="<f8").reshape(shape).astype(np.float64)
    if reader.pos != len(reader.blob):
        raise CheckpointError("trailing bytes after final tensor")
    return tensors
