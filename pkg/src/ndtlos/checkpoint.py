"""Self-describing binary checkpoint container.

Layout (little-endian)::

    magic     4 bytes   b"NDTM"
    version   u16
    family    u8 length + ASCII tag ("cnn", "svm", "rf")
    meta      u32 length + UTF-8 JSON
    count     u32 number of parameter blocks
    blocks    repeated: u16 name length, name, u8 ndim, ndim x u32 dims, f64 data
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import DataError
from .models import ModelArtifact

MAGIC = b"NDTM"
VERSION = 1


def dumps(art: ModelArtifact) -> bytes:
    parts = [MAGIC, struct.pack("<H", VERSION)]
    tag = art.family.encode("ascii")
    parts.append(struct.pack("<B", len(tag)) + tag)
    meta = json.dumps(art.meta, sort_keys=True).encode()
    parts.append(struct.pack("<I", len(meta)) + meta)
    parts.append(struct.pack("<I", len(art.state)))
    for name in sorted(art.state):
        arr = np.ascontiguousarray(np.asarray(art.state[name], dtype="<f8"))
        bname = name.encode()
        parts.append(struct.pack("<H", len(bname)) + bname)
        parts.append(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.tobytes())
    return b"".join(parts)


def loads(blob: bytes) -> ModelArtifact:
    if blob[:4] != MAGIC:
        raise DataError("not a checkpoint (bad magic)")
    pos = 4
    try:
        (version,) = struct.unpack_from("<H", blob, pos)
        pos += 2
        if version != VERSION:
            raise DataError(f"unsupported checkpoint version {version}")
        (n,) = struct.unpack_from("<B", blob, pos)
        family = blob[pos + 1:pos + 1 + n].decode("ascii")
        pos += 1 + n
        (n,) = struct.unpack_from("<I", blob, pos)
        meta = json.loads(blob[pos + 4:pos + 4 + n])
        pos += 4 + n
        (count,) = struct.unpack_from("<I", blob, pos)
        pos += 4
        state = {}
        for _ in range(count):
            (n,) = struct.unpack_from("<H", blob, pos)
            name = blob[pos + 2:pos + 2 + n].decode()
            pos += 2 + n
            (ndim,) = struct.unpack_from("<B", blob, pos)
            shape = struct.unpack_from(f"<{ndim}I", blob, pos + 1)
            pos += 1 + 4 * ndim
            size = int(np.prod(shape)) if ndim else 1
            state[name] = np.frombuffer(blob, dtype="<f8", count=size, offset=pos).reshape(shape).copy()
            pos += 8 * size
    except (struct.error, ValueError, UnicodeDecodeError) as exc:
        raise DataError(f"corrupt checkpoint: {exc}") from exc
    if pos != len(blob):
        raise DataError(f"corrupt checkpoint: {len(blob) - pos} trailing bytes")
    return ModelArtifact(family, state, meta)


def save(art: ModelArtifact, path) -> None:
    Path(path).write_bytes(dumps(art))


def load(path) -> ModelArtifact:
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read checkpoint {path}: {exc}") from exc
    return loads(blob)
