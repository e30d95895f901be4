"""Binary checkpoint format shared by students and teachers.

Layout: magic "CTKT", format version (u32 LE), tensor count (u32 LE),
then per tensor: name length (u32 LE) + UTF-8 name, rank (u32 LE),
dims (u64 LE each), row-major float64 LE payload; finally a 64-bit
FNV-1a checksum of every preceding byte.
"""

from __future__ import annotations

import os
import struct

import numpy as np

from .errors import CheckpointError

MAGIC = b"CTKT"
VERSION = 1

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_MASK64 = 0xFFFFFFFFFFFFFFFF


def fnv1a64(data: bytes) -> int:
    h = _FNV_OFFSET
    for b in data:
        h = ((h ^ b) * _FNV_PRIME) & _MASK64
    return h


def tensor_payload(arrays: dict) -> bytes:
    """Serialize named arrays (without magic/checksum framing)."""
    parts = []
    for name, arr in arrays.items():
        arr = np.asarray(arr, dtype=np.float64)
        nb = name.encode("utf-8")
        parts.append(struct.pack("<I", len(nb)))
        parts.append(nb)
        parts.append(struct.pack("<I", arr.ndim))
        for d in arr.shape:
            parts.append(struct.pack("<Q", d))
        parts.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    return b"".join(parts)


def atomic_write(path, data: bytes) -> None:
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


def save_checkpoint(path, arrays: dict) -> None:
    body = MAGIC + struct.pack("<II", VERSION, len(arrays)) + tensor_payload(arrays)
    atomic_write(path, body + struct.pack("<Q", fnv1a64(body)))


def load_checkpoint(path) -> dict:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < len(MAGIC) + 8 + 8:
        raise CheckpointError(f"{path}: truncated checkpoint")
    body, tail = blob[:-8], blob[-8:]
    if body[: len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path}: bad magic bytes")
    (stored,) = struct.unpack("<Q", tail)
    if fnv1a64(body) != stored:
        raise CheckpointError(f"{path}: FNV-1a checksum mismatch")
    off = len(MAGIC)
    version, count = struct.unpack_from("<II", body, off)
    off += 8
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported format version {version}")
    out = {}
    try:
        for _ in range(count):
            (name_len,) = struct.unpack_from("<I", body, off)
            off += 4
            name = body[off : off + name_len].decode("utf-8")
            off += name_len
            (rank,) = struct.unpack_from("<I", body, off)
            off += 4
            dims = struct.unpack_from(f"<{rank}Q", body, off) if rank else ()
            off += 8 * rank
            n = int(np.prod(dims)) if rank else 1
            arr = np.frombuffer(body, dtype="<f8", count=n, offset=off).reshape(dims)
            off += 8 * n
            out[name] = arr.astype(np.float64)
    except (struct.error, ValueError) as exc:
        raise CheckpointError(f"{path}: malformed tensor records ({exc})") from exc
    if off != len(body):
        raise CheckpointError(f"{path}: trailing bytes after tensor records")
    return out


def checksum_file(path) -> int:
    """FNV-1a of a whole file (determinism assertions)."""
    with open(path, "rb") as fh:
        return fnv1a64(fh.read())
