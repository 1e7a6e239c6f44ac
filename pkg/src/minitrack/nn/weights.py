"""Flat binary container for named float64 tensors.

Byte layout (all integers little-endian):

    magic   4 bytes   b"MTW1"
    count   uint32    number of tensors
    -- repeated `count` times (header entries) --
    nlen    uint16    UTF-8 byte length of the tensor name
    name    nlen bytes
    rank    uint8
    extents rank * uint32
    -- then, in the same order --
    data    product(extents) * float64, little-endian, row-major

Used for embedding weights, classifier checkpoints and generator/discriminator
checkpoints alike.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from ..errors import IngestionError

MAGIC = b"MTW1"


def save_weights(path: str | Path, tensors: dict[str, np.ndarray]) -> None:
    path = Path(path)
    header = [MAGIC, struct.pack("<I", len(tensors))]
    blobs = []
    for name, arr in tensors.items():
        arr = np.ascontiguousarray(arr, dtype=np.float64)
        encoded = name.encode("utf-8")
        header.append(struct.pack("<H", len(encoded)))
        header.append(encoded)
        header.append(struct.pack("<B", arr.ndim))
        header.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        blobs.append(arr.astype("<f8").tobytes())
    path.write_bytes(b"".join(header + blobs))


def load_weights(path: str | Path) -> dict[str, np.ndarray]:
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise IngestionError(f"{path}: not a weight file (bad magic {raw[:4]!r})")
    off = 4
    (count,) = struct.unpack_from("<I", raw, off)
    off += 4
    entries = []
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", raw, off)
        off += 2
        name = raw[off : off + nlen].decode("utf-8")
        off += nlen
        (rank,) = struct.unpack_from("<B", raw, off)
        off += 1
        shape = struct.unpack_from(f"<{rank}I", raw, off)
        off += 4 * rank
        entries.append((name, shape))
    tensors = {}
    for name, shape in entries:
        n = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(raw, dtype="<f8", count=n, offset=off).reshape(shape)
        off += 8 * n
        tensors[name] = arr.astype(np.float64)
    if off != len(raw):
        raise IngestionError(f"{path}: {len(raw) - off} trailing bytes after tensor data")
    return tensors
