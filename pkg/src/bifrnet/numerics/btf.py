"""BTF1 tensor files.

Layout: ``b"BTF1"``, u8 dtype code (0 = f64, 1 = f32), u8 rank, rank × u32
little-endian dims, then row-major little-endian element bytes.
"""

from __future__ import annotations

import io
import struct
from pathlib import Path

import numpy as np

MAGIC = b"BTF1"
_CODES = {0: np.dtype("<f8"), 1: np.dtype("<f4")}


class BTFError(ValueError):
    pass


def dumps(arr: np.ndarray) -> bytes:
    arr = np.asarray(arr)
    if arr.dtype == np.float64:
        code = 0
    elif arr.dtype == np.float32:
        code = 1
    else:
        raise BTFError(f"unsupported dtype {arr.dtype}")
    if arr.ndim > 255:
        raise BTFError("rank exceeds 255")
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<BB", code, arr.ndim))
    buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
    buf.write(np.ascontiguousarray(arr, dtype=_CODES[code]).tobytes())
    return buf.getvalue()


def loads(raw: bytes) -> np.ndarray:
    if raw[:4] != MAGIC:
        raise BTFError("bad magic")
    code, rank = struct.unpack_from("<BB", raw, 4)
    if code not in _CODES:
        raise BTFError(f"unknown dtype code {code}")
    dims = struct.unpack_from(f"<{rank}I", raw, 6)
    off = 6 + 4 * rank
    dt = _CODES[code]
    count = int(np.prod(dims)) if rank else 1
    if len(raw) - off != count * dt.itemsize:
        raise BTFError(f"payload is {len(raw) - off} bytes, header implies {count * dt.itemsize}")
    return np.frombuffer(raw, dtype=dt, count=count, offset=off).reshape(dims).astype(dt.newbyteorder("="))


def save(path: str | Path, arr: np.ndarray) -> None:
    Path(path).write_bytes(dumps(arr))


def load(path: str | Path) -> np.ndarray:
    return loads(Path(path).read_bytes())
