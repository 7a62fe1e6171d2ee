"""Enrollment database and pass-phrase authentication.

A record binds (client, phrase) to one embedding and to the fingerprint of
the model that produced it. Store file layout (little-endian): magic
``LFS1``, u32 record count, then per record: u32-length-prefixed UTF-8
client id and phrase id, i64 timestamp (ns since epoch), 32-byte model
fingerprint, u32 embedding dimension, float32 embedding.
"""

from __future__ import annotations

import hashlib
import os
import struct
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import ConflictError, FormatError, ModelMismatchError, NotEnrolledError, UsageError
from .metrics import cosine_similarity
from .slowfast import SlowFastModel, embed
from .tensor.checkpoint import atomic_write, fingerprint

MAGIC = b"LFS1"


@dataclass(frozen=True)
class EnrollmentRecord:
    client_id: str
    phrase_id: str
    embedding: np.ndarray
    enrolled_at: int
    model_fingerprint: bytes

    def __eq__(self, other):
        if not isinstance(other, EnrollmentRecord):
            return NotImplemented
        return (self.client_id == other.client_id and self.phrase_id == other.phrase_id
                and self.enrolled_at == other.enrolled_at
                and self.model_fingerprint == other.model_fingerprint
                and self.embedding.tobytes() == other.embedding.tobytes())

    __hash__ = None


@dataclass(frozen=True)
class AuthDecision:
    accepted: bool
    similarity: float
    threshold: float

    def to_dict(self) -> dict:
        return {"accepted": self.accepted, "similarity": self.similarity, "threshold": self.threshold}


@dataclass
class AuthStore:
    records: dict = field(default_factory=dict)  # (client_id, phrase_id) -> EnrollmentRecord
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False, compare=False)

    def __len__(self):
        return len(self.records)

    def __eq__(self, other):
        return isinstance(other, AuthStore) and self.records == other.records

    @property
    def fingerprint(self) -> Optional[bytes]:
        for rec in self.records.values():
            return rec.model_fingerprint
        return None

    def get(self, client_id: str, phrase_id: str) -> EnrollmentRecord:
        try:
            return self.records[(client_id, phrase_id)]
        except KeyError:
            raise NotEnrolledError(f"client {client_id!r} is not enrolled for phrase {phrase_id!r}") from None

    def digest(self) -> str:
        """Hash of all stored embeddings, for tamper/mutation checks."""
        h = hashlib.sha256()
        for key in sorted(self.records):
            h.update(self.records[key].embedding.tobytes())
        return h.hexdigest()


def _model_fingerprint(model: SlowFastModel) -> bytes:
    return fingerprint(model.params)


def _check_model(store: AuthStore, fp: bytes) -> None:
    if store.fingerprint is not None and store.fingerprint != fp:
        raise ModelMismatchError("model fingerprint differs from the one the store was enrolled with")


def _frames(clip):
    return clip.frames if hasattr(clip, "frames") else clip


def enroll(store: AuthStore, client_id: str, phrase_id: str, clip, model: SlowFastModel,
           now_ns: Optional[int] = None) -> EnrollmentRecord:
    fp = _model_fingerprint(model)
    key = (str(client_id), str(phrase_id))
    with store._lock:
        if key in store.records:
            raise ConflictError(f"client {key[0]!r} already enrolled for phrase {key[1]!r}")
        _check_model(store, fp)
        vec = np.asarray(embed(model, _frames(clip)), dtype=np.float32).copy()
        vec.setflags(write=False)
        rec = EnrollmentRecord(key[0], key[1], vec,
                               time.time_ns() if now_ns is None else int(now_ns), fp)
        store.records[key] = rec
    return rec


def decide(stored: np.ndarray, fresh: np.ndarray, threshold: float) -> AuthDecision:
    sim = cosine_similarity(stored, fresh)
    return AuthDecision(sim >= threshold, sim, float(threshold))


def authenticate(store: AuthStore, client_id: str, phrase_id: str, clip, model: SlowFastModel,
                 threshold: float) -> AuthDecision:
    if not -1.0 <= threshold <= 1.0:
        raise UsageError(f"threshold {threshold} outside [-1, 1]")
    rec = store.get(str(client_id), str(phrase_id))
    if rec.model_fingerprint != _model_fingerprint(model):
        raise ModelMismatchError("model fingerprint differs from the enrolled record's")
    fresh = np.asarray(embed(model, _frames(clip)), dtype=np.float32)
    return decide(rec.embedding, fresh, threshold)


def _pack_str(s: str) -> bytes:
    b = s.encode("utf-8")
    return struct.pack("<I", len(b)) + b


def dumps(store: AuthStore) -> bytes:
    parts = [MAGIC, struct.pack("<I", len(store.records))]
    for key in sorted(store.records):
        rec = store.records[key]
        parts += [_pack_str(rec.client_id), _pack_str(rec.phrase_id),
                  struct.pack("<q", rec.enrolled_at), rec.model_fingerprint,
                  struct.pack("<I", rec.embedding.size),
                  np.ascontiguousarray(rec.embedding, dtype="<f4").tobytes()]
    return b"".join(parts)


def loads(blob: bytes) -> AuthStore:
    pos = 0

    def take(n):
        nonlocal pos
        if pos + n > len(blob):
            raise FormatError("store file truncated")
        chunk = blob[pos:pos + n]
        pos += n
        return chunk

    def take_str():
        (n,) = struct.unpack("<I", take(4))
        try:
            return take(n).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise FormatError(f"bad key string: {exc}") from None

    if take(4) != MAGIC:
        raise FormatError("bad store magic")
    (count,) = struct.unpack("<I", take(4))
    store = AuthStore()
    for _ in range(count):
        client, phrase = take_str(), take_str()
        (ts,) = struct.unpack("<q", take(8))
        fp = take(32)
        (dim,) = struct.unpack("<I", take(4))
        vec = np.frombuffer(take(4 * dim), dtype="<f4").astype(np.float32)
        vec.setflags(write=False)
        if (client, phrase) in store.records:
            raise FormatError(f"duplicate record for {(client, phrase)}")
        store.records[(client, phrase)] = EnrollmentRecord(client, phrase, vec, ts, fp)
    if pos != len(blob):
        raise FormatError("trailing bytes in store file")
    return store


def save_store(store: AuthStore, path) -> None:
    """Atomic: written to a temporary file and renamed into place."""
    atomic_write(path, dumps(store))


def load_store(path) -> AuthStore:
    return loads(Path(path).read_bytes())


def open_store(path) -> AuthStore:
    """Load ``path`` if it exists, otherwise start an empty store."""
    return load_store(path) if os.path.exists(path) else AuthStore()
