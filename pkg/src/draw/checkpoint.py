"""Binary checkpoint format.

    b"DRAWCKPT"                     magic
    uint32 LE                       format version
    repeated until EOF:
        uint32 LE name length, name bytes (utf-8)
        uint32 LE rank, rank x uint32 LE extents
        product(extents) x float64 LE values

Record names are namespaced: ``param/<name>``, ``adam/m/<name>``,
``adam/v/<name>``, ``adam/step``, ``adam/hyper``, ``meta/<key>`` and
``config/<key>``.
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"DRAWCKPT"
VERSION = 1


class CheckpointError(ValueError):
    pass


def write_records(path, records: dict[str, np.ndarray]):
    path = Path(path)
    parts = [MAGIC, struct.pack("<I", VERSION)]
    for name, value in records.items():
        arr = np.asarray(value, dtype="<f8")
        key = name.encode("utf-8")
        parts.append(struct.pack("<I", len(key)) + key)
        parts.append(struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape))
        parts.append(np.ascontiguousarray(arr).tobytes())
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(b"".join(parts))
    tmp.replace(path)


def read_records(path) -> dict[str, np.ndarray]:
    raw = Path(path).read_bytes()
    if raw[:8] != MAGIC:
        raise CheckpointError(f"{path}: not a DRAW checkpoint")
    (version,) = struct.unpack_from("<I", raw, 8)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    pos, out = 12, {}
    try:
        while pos < len(raw):
            (n,) = struct.unpack_from("<I", raw, pos)
            name = raw[pos + 4:pos + 4 + n].decode("utf-8")
            pos += 4 + n
            (rank,) = struct.unpack_from("<I", raw, pos)
            shape = struct.unpack_from(f"<{rank}I", raw, pos + 4)
            pos += 4 + 4 * rank
            count = int(np.prod(shape))
            if pos + 8 * count > len(raw):
                raise CheckpointError(f"{path}: truncated record {name!r}")
            out[name] = np.frombuffer(raw, "<f8", count, pos).reshape(shape).copy()
            pos += 8 * count
    except struct.error as exc:
        raise CheckpointError(f"{path}: truncated at byte {pos}") from exc
    return out
