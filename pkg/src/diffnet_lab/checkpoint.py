"""Binary checkpoint format for named float32 arrays.

Layout (all integers little-endian)::

    b"DIFFNET1"
    uint32 array count
    per array: uint32 name length, UTF-8 name, uint32 rank, rank x uint32 dims,
               float32 payload in C order
    uint64 FNV-1a hash over the concatenated payload bytes
"""

import os
import struct
from collections import OrderedDict

import numpy as np

MAGIC = b"DIFFNET1"
FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3
_MASK = 0xFFFFFFFFFFFFFFFF


class CheckpointError(ValueError):
    pass


def fnv1a64(data, h=FNV_OFFSET):
    """64-bit FNV-1a over ``data``; pass the previous hash to continue a stream."""
    for byte in data:
        h = ((h ^ byte) * FNV_PRIME) & _MASK
    return h


def _payload_hash(payloads):
    h = FNV_OFFSET
    for chunk in payloads:
        h = fnv1a64(chunk, h)
    return h


def encode(arrays):
    """Serialise an ordered mapping of name -> array to bytes."""
    head = [MAGIC, struct.pack("<I", len(arrays))]
    payloads = []
    for name, value in arrays.items():
        a = np.array(value, dtype="<f4", order="C")
        raw_name = name.encode("utf-8")
        head.append(struct.pack("<I", len(raw_name)) + raw_name)
        head.append(struct.pack(f"<I{a.ndim}I", a.ndim, *a.shape))
        payload = a.tobytes()
        head.append(payload)
        payloads.append(payload)
    head.append(struct.pack("<Q", _payload_hash(payloads)))
    return b"".join(head)


def decode(buf):
    """Parse bytes written by :func:`encode` into an OrderedDict of float32 arrays."""
    view = memoryview(buf)
    pos = 0

    def take(n, what):
        nonlocal pos
        if pos + n > len(view):
            raise CheckpointError(f"truncated checkpoint: need {n} bytes for {what} at offset {pos}")
        out = view[pos:pos + n]
        pos += n
        return out

    if bytes(take(len(MAGIC), "magic")) != MAGIC:
        raise CheckpointError("bad magic: not a DIFFNET1 checkpoint")
    (count,) = struct.unpack("<I", take(4, "array count"))
    arrays = OrderedDict()
    payloads = []
    for _ in range(count):
        (nlen,) = struct.unpack("<I", take(4, "name length"))
        name = bytes(take(nlen, "name")).decode("utf-8")
        (rank,) = struct.unpack("<I", take(4, "rank"))
        dims = struct.unpack(f"<{rank}I", take(4 * rank, "dims"))
        size = int(np.prod(dims, dtype=np.int64))
        payload = bytes(take(4 * size, f"payload of {name!r}"))
        payloads.append(payload)
        arrays[name] = np.frombuffer(payload, dtype="<f4").reshape(dims).astype(np.float32)
    (stored,) = struct.unpack("<Q", take(8, "checksum"))
    if pos != len(view):
        raise CheckpointError(f"{len(view) - pos} trailing bytes after checksum")
    actual = _payload_hash(payloads)
    if stored != actual:
        raise CheckpointError(f"checksum mismatch: stored {stored:#018x}, computed {actual:#018x}")
    return arrays


def save(path, arrays):
    """Atomic write via a temporary file in the same directory."""
    data = encode(arrays)
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


def load(path):
    with open(path, "rb") as fh:
        return decode(fh.read())
