"""Binary parameter checkpoints (magic ``LFA1``).

Layout, all little-endian: magic, u64 parameter count, then per parameter
u64 name length, UTF-8 name, u64 rank, rank x u64 dims, float32 data.
"""

from __future__ import annotations

import hashlib
import io
import os
import struct
import tempfile
from pathlib import Path
from typing import Sequence

import numpy as np

from ..errors import FormatError
from .tensor import Parameter

MAGIC = b"LFA1"


def dumps(params: Sequence[Parameter]) -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<Q", len(params)))
    for p in params:
        name = p.name.encode("utf-8")
        buf.write(struct.pack("<Q", len(name)))
        buf.write(name)
        buf.write(struct.pack("<Q", p.data.ndim))
        buf.write(struct.pack(f"<{p.data.ndim}Q", *p.data.shape))
        buf.write(np.ascontiguousarray(p.data, dtype="<f4").tobytes())
    return buf.getvalue()


def loads(blob: bytes) -> list[Parameter]:
    view = memoryview(blob)
    pos = 0

    def take(n):
        nonlocal pos
        if pos + n > len(view):
            raise FormatError("checkpoint truncated")
        chunk = view[pos:pos + n]
        pos += n
        return chunk

    if bytes(take(4)) != MAGIC:
        raise FormatError("bad checkpoint magic")
    (count,) = struct.unpack("<Q", take(8))
    params = []
    for _ in range(count):
        (nlen,) = struct.unpack("<Q", take(8))
        try:
            name = bytes(take(nlen)).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise FormatError(f"bad parameter name: {exc}") from None
        (rank,) = struct.unpack("<Q", take(8))
        dims = struct.unpack(f"<{rank}Q", take(8 * rank))
        n = int(np.prod(dims, dtype=np.int64))
        data = np.frombuffer(take(4 * n), dtype="<f4").astype(np.float32).reshape(dims)
        params.append(Parameter(name, data))
    if pos != len(view):
        raise FormatError("trailing bytes after checkpoint")
    return params


def atomic_write(path, blob: bytes) -> None:
    """Write via a temporary file in the same directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(blob)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save(path, params: Sequence[Parameter]) -> None:
    atomic_write(path, dumps(params))


def load(path) -> list[Parameter]:
    return loads(Path(path).read_bytes())


def fingerprint(params: Sequence[Parameter]) -> bytes:
    """SHA-256 of the serialized checkpoint (32 bytes)."""
    return hashlib.sha256(dumps(params)).digest()
