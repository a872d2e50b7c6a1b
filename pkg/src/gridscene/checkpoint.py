"""Binary checkpoint container: CRC-verified named-tensor table plus metadata.

Layout, all integers little-endian:

    magic "SGAR" | u32 version | u64 meta-json length | meta-json bytes |
    u32 tensor count | per tensor (sorted by name):
        u16 name length | name utf-8 | u8 dtype tag | u8 ndim |
        ndim x u64 dims | raw C-order values |
    u32 CRC32 of everything before it

Metadata is canonical JSON (sorted keys, compact separators), so
save -> load -> save reproduces the file byte for byte.
"""

from __future__ import annotations

import json
import struct
import zlib
from pathlib import Path

import numpy as np


class CheckpointError(ValueError):
    """Unreadable, corrupt, or version-mismatched checkpoint file."""


MAGIC = b"SGAR"
VERSION = 1

_DTYPES = {0: np.dtype("<f8"), 1: np.dtype("<f4")}
_TAGS = {np.dtype("float64"): 0, np.dtype("float32"): 1}


def save_checkpoint(path, tensors: dict[str, np.ndarray], meta: dict) -> None:
    blob = bytearray()
    blob += MAGIC + struct.pack("<I", VERSION)
    meta_bytes = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode()
    blob += struct.pack("<Q", len(meta_bytes)) + meta_bytes
    blob += struct.pack("<I", len(tensors))
    for name in sorted(tensors):
        arr = np.ascontiguousarray(tensors[name])
        if arr.dtype not in _TAGS:
            raise CheckpointError(f"tensor {name!r} has unsupported dtype {arr.dtype}")
        encoded = name.encode()
        blob += struct.pack("<H", len(encoded)) + encoded
        blob += struct.pack("<BB", _TAGS[arr.dtype], arr.ndim)
        if arr.ndim:
            blob += struct.pack(f"<{arr.ndim}Q", *arr.shape)
        blob += arr.astype(arr.dtype.newbyteorder("<"), copy=False).tobytes()
    blob += struct.pack("<I", zlib.crc32(bytes(blob)) & 0xFFFFFFFF)
    Path(path).write_bytes(bytes(blob))


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.at = 0

    def take(self, count: int, what: str) -> bytes:
        if self.at + count > len(self.data):
            raise CheckpointError(f"truncated checkpoint while reading {what}")
        out = self.data[self.at : self.at + count]
        self.at += count
        return out

    def u(self, fmt: str, what: str) -> int:
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))[0]


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    data = Path(path).read_bytes()
    if len(data) < len(MAGIC) + 8:
        raise CheckpointError("truncated checkpoint: shorter than the fixed header")
    stored_crc = struct.unpack("<I", data[-4:])[0]
    actual_crc = zlib.crc32(data[:-4]) & 0xFFFFFFFF
    if stored_crc != actual_crc:
        raise CheckpointError(
            f"checksum mismatch: stored {stored_crc:#010x}, computed {actual_crc:#010x}"
        )
    r = _Reader(data[:-4])
    if r.take(4, "magic") != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    version = r.u("<I", "version")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}, expected {VERSION}")
    meta_len = r.u("<Q", "metadata length")
    try:
        meta = json.loads(r.take(meta_len, "metadata").decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"corrupt metadata block: {e}") from e
    count = r.u("<I", "tensor count")
    tensors = {}
    for _ in range(count):
        name_len = r.u("<H", "tensor name length")
        name = r.take(name_len, "tensor name").decode()
        tag = r.u("<B", f"dtype of {name}")
        if tag not in _DTYPES:
            raise CheckpointError(f"tensor {name!r} has unknown dtype tag {tag}")
        ndim = r.u("<B", f"rank of {name}")
        shape = tuple(r.u("<Q", f"dims of {name}") for _ in range(ndim))
        dtype = _DTYPES[tag]
        raw = r.take(int(np.prod(shape, dtype=np.int64)) * dtype.itemsize, f"values of {name}")
        tensors[name] = np.frombuffer(raw, dtype=dtype).reshape(shape).copy()
    if r.at != len(r.data):
        raise CheckpointError(f"{len(r.data) - r.at} unexpected trailing bytes")
    return tensors, meta
