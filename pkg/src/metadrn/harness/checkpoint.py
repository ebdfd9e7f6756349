"""Little-endian binary checkpoints.

Layout::

    b"MDRN" | version u32 | sha256 config hash (32 bytes) | count u32
    count x ( name_len u32 | name utf-8 | dtype u8 | rank u32 | dims u64[rank] | raw data )
"""
from __future__ import annotations

import os
import struct
from pathlib import Path

import numpy as np

MAGIC = b"MDRN"
VERSION = 1
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8"), 2: np.dtype("<i8"), 3: np.dtype("u1")}
_CODES = {(v.kind, v.itemsize): k for k, v in _DTYPES.items()}


class CheckpointError(ValueError):
    pass


def encode(arrays: dict[str, np.ndarray], config_hash: bytes) -> bytes:
    if len(config_hash) != 32:
        raise ValueError("config hash must be 32 bytes")
    parts = [MAGIC, struct.pack("<I", VERSION), config_hash, struct.pack("<I", len(arrays))]
    for name, arr in arrays.items():
        arr = np.asarray(arr)
        code = _CODES.get((arr.dtype.kind, arr.dtype.itemsize))
        if code is None:
            raise CheckpointError(f"unsupported dtype {arr.dtype} for {name}")
        raw = np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes()
        nb = name.encode()
        parts += [struct.pack("<I", len(nb)), nb, struct.pack("<BI", code, arr.ndim),
                  struct.pack(f"<{arr.ndim}Q", *arr.shape), raw]
    return b"".join(parts)


def decode(buf: bytes, source="<bytes>") -> tuple[dict[str, np.ndarray], bytes]:
    if buf[:4] != MAGIC:
        raise CheckpointError(f"{source}: not a checkpoint (bad magic)")
    (version,) = struct.unpack_from("<I", buf, 4)
    if version != VERSION:
        raise CheckpointError(f"{source}: unsupported checkpoint version {version}")
    config_hash = buf[8:40]
    (count,) = struct.unpack_from("<I", buf, 40)
    pos = 44
    arrays: dict[str, np.ndarray] = {}
    try:
        for _ in range(count):
            (nlen,) = struct.unpack_from("<I", buf, pos)
            pos += 4
            name = buf[pos:pos + nlen].decode()
            pos += nlen
            code, rank = struct.unpack_from("<BI", buf, pos)
            pos += 5
            dims = struct.unpack_from(f"<{rank}Q", buf, pos)
            pos += 8 * rank
            dt = _DTYPES[code]
            n = int(np.prod(dims, dtype=np.int64)) if rank else 1
            arr = np.frombuffer(buf, dtype=dt, count=n, offset=pos).reshape(dims)
            pos += n * dt.itemsize
            arrays[name] = arr.astype(dt.newbyteorder("="), copy=True)
    except (struct.error, KeyError, ValueError) as exc:
        raise CheckpointError(f"{source}: corrupt checkpoint near byte {pos}: {exc}") from None
    if pos != len(buf):
        raise CheckpointError(f"{source}: {len(buf) - pos} trailing bytes")
    return arrays, config_hash


def save(path, arrays: dict[str, np.ndarray], config_hash: bytes) -> None:
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(encode(arrays, config_hash))
    os.replace(tmp, path)


def load(path) -> tuple[dict[str, np.ndarray], bytes]:
    return decode(Path(path).read_bytes(), str(path))
