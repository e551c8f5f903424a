"""Binary checkpoint container for named float64 tensors.

Layout, all integers little-endian:

    magic   4 bytes  b"VACL"
    version u32
    count   u32
    entry*  name_len u32, name UTF-8, ndim u32, dims u64 each,
            payload raw little-endian IEEE-754 float64
    crc32   u32 over all preceding bytes

Entries are sorted by name so identical contents always produce identical
bytes. A CRC mismatch, short file, or bad header is rejected on load.
"""

from __future__ import annotations

import struct
import zlib
from pathlib import Path
from typing import Mapping

import numpy as np

from .io import atomic_write_bytes

MAGIC = b"VACL"
VERSION = 1


class CheckpointError(RuntimeError):
    """The checkpoint bytes are malformed, truncated, or corrupted."""


def encode_checkpoint(tensors: Mapping[str, np.ndarray]) -> bytes:
    parts = [MAGIC, struct.pack("<II", VERSION, len(tensors))]
    for name in sorted(tensors):
        arr = np.asarray(tensors[name], dtype=np.float64, order="C")
        encoded = name.encode("utf-8")
        parts.append(struct.pack("<I", len(encoded)))
        parts.append(encoded)
        parts.append(struct.pack("<I", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        parts.append(arr.astype("<f8", copy=False).tobytes())
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body))


def decode_checkpoint(blob: bytes) -> dict[str, np.ndarray]:
    if len(blob) < len(MAGIC) + 12:
        raise CheckpointError("checkpoint too short")
    body, (crc,) = blob[:-4], struct.unpack("<I", blob[-4:])
    if zlib.crc32(body) != crc:
        raise CheckpointError("checkpoint CRC mismatch")
    if body[:4] != MAGIC:
        raise CheckpointError("bad magic; not a checkpoint file")
    version, count = struct.unpack("<II", body[4:12])
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")

    offset = 12
    out: dict[str, np.ndarray] = {}

    def take(n: int) -> bytes:
        nonlocal offset
        if offset + n > len(body):
            raise CheckpointError("checkpoint truncated")
        chunk = body[offset:offset + n]
        offset += n
        return chunk

    for _ in range(count):
        (name_len,) = struct.unpack("<I", take(4))
        name = take(name_len).decode("utf-8")
        (ndim,) = struct.unpack("<I", take(4))
        dims = struct.unpack(f"<{ndim}Q", take(8 * ndim))
        size = 1
        for d in dims:
            size *= d
        payload = take(8 * size)
        arr = np.frombuffer(payload, dtype="<f8").astype(np.float64).reshape(dims)
        if name in out:
            raise CheckpointError(f"duplicate entry {name!r}")
        out[name] = arr
    if offset != len(body):
        raise CheckpointError("trailing bytes after last entry")
    return out


def save_checkpoint(path: str | Path, tensors: Mapping[str, np.ndarray]) -> None:
    atomic_write_bytes(Path(path), encode_checkpoint(tensors))


def load_checkpoint(path: str | Path) -> dict[str, np.ndarray]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    return decode_checkpoint(path.read_bytes())
