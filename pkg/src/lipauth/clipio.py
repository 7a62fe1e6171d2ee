"""Clip (``CLP1``) and landmark CSV file formats.

A clip file is the 4-byte magic ``CLP1``, four little-endian u32 dims
``T, H, W, C`` and then ``T*H*W*C`` little-endian float32 pixels in
row-major order. A landmark file has one line per frame holding 48
comma-separated numbers ``x1,y1,...,x24,y24``.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import FormatError
from .tensor.checkpoint import atomic_write

CLIP_MAGIC = b"CLP1"
N_LANDMARKS = 24


def clip_to_bytes(frames: np.ndarray) -> bytes:
    frames = np.asarray(frames)
    if frames.ndim != 4:
        raise FormatError(f"clip must be 4-D [T,H,W,C], got shape {frames.shape}")
    header = CLIP_MAGIC + struct.pack("<4I", *frames.shape)
    return header + np.ascontiguousarray(frames, dtype="<f4").tobytes()


def clip_from_bytes(blob: bytes) -> np.ndarray:
    if len(blob) < 20 or blob[:4] != CLIP_MAGIC:
        raise FormatError("bad clip magic or truncated header")
    dims = struct.unpack("<4I", blob[4:20])
    n = int(np.prod(dims, dtype=np.int64))
    if len(blob) != 20 + 4 * n:
        raise FormatError(f"clip payload has {len(blob) - 20} bytes, expected {4 * n}")
    return np.frombuffer(blob, dtype="<f4", offset=20).astype(np.float32).reshape(dims)


def write_clip(path, frames: np.ndarray) -> None:
    atomic_write(path, clip_to_bytes(frames))


def read_clip(path) -> np.ndarray:
    return clip_from_bytes(Path(path).read_bytes())


def landmarks_to_text(landmarks) -> str:
    lines = []
    for frame in landmarks:
        pts = np.asarray(getattr(frame, "points", frame), dtype=np.float64).reshape(-1)
        if pts.size != 2 * N_LANDMARKS:
            raise FormatError(f"expected {2 * N_LANDMARKS} coordinates, got {pts.size}")
        lines.append(",".join(repr(float(v)) for v in pts))
    return "\n".join(lines) + ("\n" if lines else "")


def landmarks_from_text(text: str) -> np.ndarray:
    rows = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line:
            continue
        try:
            vals = [float(v) for v in line.split(",")]
        except ValueError as exc:
            raise FormatError(f"line {lineno}: {exc}") from None
        if len(vals) != 2 * N_LANDMARKS:
            raise FormatError(f"line {lineno}: expected {2 * N_LANDMARKS} numbers, got {len(vals)}")
        rows.append(vals)
    return np.asarray(rows, dtype=np.float64).reshape(-1, N_LANDMARKS, 2)


def write_landmarks(path, landmarks) -> None:
    atomic_write(path, landmarks_to_text(landmarks).encode("ascii"))


def read_landmarks(path) -> np.ndarray:
    """Return an array ``[frames, 24, 2]``."""
    return landmarks_from_text(Path(path).read_text())
