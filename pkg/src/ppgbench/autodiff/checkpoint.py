"""Binary parameter checkpoints.

Layout (little-endian)::

    magic     8 bytes  b"PPGBCKPT"
    version   u32      1
    count     u32      number of tensors
    meta_len  u32      length of the UTF-8 ``key=value`` metadata block
    meta      bytes
    per tensor:
        name_len u32, name (UTF-8), rank u32, dims u32 * rank, data float32 * prod(dims)
"""

from __future__ import annotations

import struct
from collections import OrderedDict

import numpy as np

from ..errors import DataError

MAGIC = b"PPGBCKPT"
VERSION = 1


def dumps(tensors, meta: str = "") -> bytes:
    parts = [MAGIC, struct.pack("<III", VERSION, len(tensors), len(meta.encode()))]
    parts.append(meta.encode())
    for name, arr in tensors.items():
        a = np.asarray(arr, dtype="<f4")
        nb = name.encode()
        parts.append(struct.pack("<I", len(nb)) + nb)
        parts.append(struct.pack(f"<I{a.ndim}I", a.ndim, *a.shape))
        parts.append(a.tobytes(order="C"))
    return b"".join(parts)


def loads(blob: bytes):
    if blob[:8] != MAGIC:
        raise DataError("not a checkpoint (bad magic)")
    version, count, meta_len = struct.unpack_from("<III", blob, 8)
    if version != VERSION:
        raise DataError(f"unsupported checkpoint version {version}")
    pos = 20
    meta = blob[pos:pos + meta_len].decode()
    pos += meta_len
    out = OrderedDict()
    for _ in range(count):
        (n,) = struct.unpack_from("<I", blob, pos)
        pos += 4
        name = blob[pos:pos + n].decode()
        pos += n
        (rank,) = struct.unpack_from("<I", blob, pos)
        pos += 4
        dims = struct.unpack_from(f"<{rank}I", blob, pos)
        pos += 4 * rank
        size = int(np.prod(dims)) if rank else 1
        out[name] = np.frombuffer(blob, dtype="<f4", count=size, offset=pos).reshape(dims).copy()
        pos += 4 * size
    return out, meta


def save_checkpoint(path, tensors, meta: str = "") -> None:
    with open(path, "wb") as fh:
        fh.write(dumps(tensors, meta))


def load_checkpoint(path):
    with open(path, "rb") as fh:
        return loads(fh.read())


def format_meta(pairs) -> str:
    return "".join(f"{k}={v}\n" for k, v in pairs)


def parse_meta(text: str) -> dict:
    out = {}
    for line in text.splitlines():
        if line.strip():
            k, _, v = line.partition("=")
            out[k.strip()] = v.strip()
    return out
