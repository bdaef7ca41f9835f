"""Versioned binary container for parameters and training state.

Layout (all integers and floats little-endian)::

    magic        8 bytes   b"SGANCKPT"
    version      u32
    stage        u32
    alpha        f64
    meta_len     u32, then meta_len bytes of UTF-8 JSON (sorted keys):
                 kind, network/training config, counters, Adam step
                 counts, RNG state
    n_blobs      u32, then per blob:
                   name_len u32, name (UTF-8), rank u32,
                   extents u64 * rank, values f64 * prod(extents)
    crc32        u32 over every preceding byte

Optimizer moments are stored as ordinary blobs (``opt.<net>.m.<param>``).
"""
from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass

import numpy as np

MAGIC = b"SGANCKPT"
VERSION = 1


class CheckpointError(ValueError):
    pass


class VersionMismatchError(CheckpointError):
    pass


class TruncatedCheckpointError(CheckpointError):
    pass


class ChecksumError(CheckpointError):
    pass


@dataclass
class Container:
    stage: int
    alpha: float
    meta: dict
    blobs: dict  # name -> ndarray (insertion order preserved)


def encode(container: Container) -> bytes:
    parts = [MAGIC, struct.pack("<IId", VERSION, container.stage, container.alpha)]
    meta = json.dumps(container.meta, sort_keys=True, separators=(",", ":")).encode("utf-8")
    parts.append(struct.pack("<I", len(meta)))
    parts.append(meta)
    parts.append(struct.pack("<I", len(container.blobs)))
    for name, arr in container.blobs.items():
        arr = np.asarray(arr, dtype="<f8")
        bname = name.encode("utf-8")
        parts.append(struct.pack("<I", len(bname)))
        parts.append(bname)
        parts.append(struct.pack("<I", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        parts.append(np.ascontiguousarray(arr).tobytes())
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body))


class _Reader:
    def __init__(self, buf):
        self.buf = buf
        self.pos = 0

    def take(self, n):
        if self.pos + n > len(self.buf):
            raise TruncatedCheckpointError("checkpoint is truncated")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def decode(buf: bytes) -> Container:
    if len(buf) < len(MAGIC) or buf[:len(MAGIC)] != MAGIC:
        raise VersionMismatchError("not a checkpoint: bad magic string")
    if len(buf) < len(MAGIC) + 4:
        raise TruncatedCheckpointError("checkpoint is truncated")
    (version,) = struct.unpack_from("<I", buf, len(MAGIC))
    if version != VERSION:
        raise VersionMismatchError(f"unsupported checkpoint version {version} (expected {VERSION})")
    if len(buf) < len(MAGIC) + 20:
        raise TruncatedCheckpointError("checkpoint is truncated")
    body, (crc,) = buf[:-4], struct.unpack("<I", buf[-4:])
    r = _Reader(body)
    r.take(len(MAGIC))
    _, stage, alpha = r.unpack("<IId")
    (meta_len,) = r.unpack("<I")
    meta_raw = r.take(meta_len)
    (n_blobs,) = r.unpack("<I")
    blobs = {}
    for _ in range(n_blobs):
        (name_len,) = r.unpack("<I")
        name = r.take(name_len).decode("utf-8")
        (rank,) = r.unpack("<I")
        shape = r.unpack(f"<{rank}Q") if rank else ()
        count = int(np.prod(shape)) if rank else 1
        data = np.frombuffer(r.take(8 * count), dtype="<f8").astype(np.float64)
        blobs[name] = data.reshape(shape)
    if r.pos != len(body):
        if zlib.crc32(body) != crc:
            raise ChecksumError("checkpoint checksum mismatch")
        raise CheckpointError("trailing bytes after last blob")
    if zlib.crc32(body) != crc:
        raise ChecksumError("checkpoint checksum mismatch")
    try:
        meta = json.loads(meta_raw.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupt metadata: {exc}") from exc
    return Container(stage=stage, alpha=alpha, meta=meta, blobs=blobs)


def write(path, container: Container):
    with open(path, "wb") as fh:
        fh.write(encode(container))


def read(path) -> Container:
    with open(path, "rb") as fh:
        buf = fh.read()
    try:
        return decode(buf)
    except (struct.error, ValueError) as exc:
        if isinstance(exc, CheckpointError):
            raise
        raise TruncatedCheckpointError(str(exc)) from exc
