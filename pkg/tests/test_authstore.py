"""Enrollment store: keys, decisions, persistence, tamper detection."""

import struct

import numpy as np
import pytest

from lipauth.authstore import (AuthStore, authenticate, decide, dumps, enroll, load_store, loads,
                               open_store, save_store)
from lipauth.dataset import ClipId
from lipauth.errors import (ConflictError, FormatError, ModelMismatchError, NotEnrolledError,
                            UsageError)
from lipauth.slowfast import build, embed

from conftest import tiny_model_config


@pytest.fixture(scope="module")
def model():
    return build(tiny_model_config(), seed=0)


@pytest.fixture(scope="module")
def clips(tiny_bank):
    return tiny_bank.clips


def test_enroll_and_self_match(model, clips):
    store = AuthStore()
    clip = clips[ClipId(0, 0, 0)]
    rec = enroll(store, "0", "0", clip, model, now_ns=123)
    assert len(store) == 1 and rec.enrolled_at == 123
    np.testing.assert_array_equal(rec.embedding, embed(model, clip))
    assert abs(np.linalg.norm(rec.embedding) - 1) < 1e-6
    d = authenticate(store, "0", "0", clip, model, threshold=1 - 1e-6)
    assert d.accepted and abs(d.similarity - 1) <= 1e-6


def test_duplicate_key_conflicts(model, clips):
    store = AuthStore()
    enroll(store, "a", "p", clips[ClipId(0, 0, 0)], model)
    with pytest.raises(ConflictError):
        enroll(store, "a", "p", clips[ClipId(0, 0, 1)], model)
    enroll(store, "a", "q", clips[ClipId(0, 1, 0)], model)  # another phrase is a new credential
    assert len(store) == 2


def test_not_enrolled(model, clips):
    store = AuthStore()
    enroll(store, "a", "p", clips[ClipId(0, 0, 0)], model)
    with pytest.raises(NotEnrolledError):
        authenticate(store, "a", "other", clips[ClipId(0, 0, 0)], model, 0.5)
    with pytest.raises(NotEnrolledError):
        authenticate(store, "b", "p", clips[ClipId(0, 0, 0)], model, 0.5)


def test_model_mismatch(model, clips):
    store = AuthStore()
    enroll(store, "a", "p", clips[ClipId(0, 0, 0)], model)
    other = build(tiny_model_config(), seed=1)
    with pytest.raises(ModelMismatchError):
        authenticate(store, "a", "p", clips[ClipId(0, 0, 0)], other, 0.5)
    with pytest.raises(ModelMismatchError):
        enroll(store, "b", "p", clips[ClipId(1, 0, 0)], other)


def test_threshold_range(model, clips):
    store = AuthStore()
    enroll(store, "a", "p", clips[ClipId(0, 0, 0)], model)
    with pytest.raises(UsageError):
        authenticate(store, "a", "p", clips[ClipId(0, 0, 0)], model, 1.5)


def test_decision_rule_and_monotonicity():
    rng = np.random.default_rng(0)
    for _ in range(50):
        a, b = rng.standard_normal(8), rng.standard_normal(8)
        decisions = [decide(a, b, t) for t in np.linspace(-1, 1, 41)]
        assert all(d.accepted == (d.similarity >= d.threshold) for d in decisions)
        accepted = [d.accepted for d in decisions]
        # once rejected, every higher threshold also rejects
        assert accepted == sorted(accepted, reverse=True)
    v = np.array([1.0, 0.0])
    assert decide(v, v, 1.0).accepted  # equality accepts


def test_store_round_trip(tmp_path, model, clips):
    store = AuthStore()
    for c in range(3):
        enroll(store, f"client-{c}", "phrase-ü", clips[ClipId(c, 0, 0)], model, now_ns=10 ** 18 + c)
    save_store(store, tmp_path / "s.lfs")
    back = load_store(tmp_path / "s.lfs")
    assert back == store
    assert dumps(back) == (tmp_path / "s.lfs").read_bytes()
    assert back.digest() == store.digest()
    assert not list(tmp_path.glob("*.tmp*"))


def test_empty_store_round_trip(tmp_path):
    save_store(AuthStore(), tmp_path / "e.lfs")
    assert (tmp_path / "e.lfs").read_bytes() == b"LFS1" + struct.pack("<I", 0)
    assert len(load_store(tmp_path / "e.lfs")) == 0
    assert len(open_store(tmp_path / "missing.lfs")) == 0


def test_store_layout_hand_decoded(model, clips):
    store = AuthStore()
    rec = enroll(store, "ab", "x", clips[ClipId(0, 0, 0)], model, now_ns=-5)
    blob = dumps(store)
    assert blob[:4] == b"LFS1" and struct.unpack_from("<I", blob, 4) == (1,)
    assert struct.unpack_from("<I", blob, 8) == (2,) and blob[12:14] == b"ab"
    assert struct.unpack_from("<I", blob, 14) == (1,) and blob[18:19] == b"x"
    assert struct.unpack_from("<q", blob, 19) == (-5,)
    assert blob[27:59] == rec.model_fingerprint
    dim = struct.unpack_from("<I", blob, 59)[0]
    assert dim == 16 and len(blob) == 63 + 4 * dim
    np.testing.assert_array_equal(np.frombuffer(blob[63:], "<f4"), rec.embedding)


def test_corrupt_store_files(model, clips):
    store = AuthStore()
    enroll(store, "a", "p", clips[ClipId(0, 0, 0)], model)
    blob = dumps(store)
    for bad in (blob[:-1], b"XXXX" + blob[4:], blob + b"\0", blob[:3]):
        with pytest.raises(FormatError):
            loads(bad)


def test_reads_never_mutate_embeddings(model, clips):
    store = AuthStore()
    for c in range(2):
        enroll(store, str(c), "0", clips[ClipId(c, 0, 0)], model)
    before = store.digest()
    for c in range(2):
        authenticate(store, str(c), "0", clips[ClipId(c, 0, 1)], model, 0.5)
    assert store.digest() == before
    with pytest.raises(ValueError):
        store.get("0", "0").embedding[0] = 0.0


def test_cross_authentication_is_symmetric(model, clips):
    """Similarities are symmetric: authenticating A against B's enrollment equals the reverse."""
    store = AuthStore()
    enroll(store, "x", "a", clips[ClipId(0, 0, 0)], model)
    enroll(store, "y", "a", clips[ClipId(1, 0, 0)], model)
    ab = authenticate(store, "x", "a", clips[ClipId(1, 0, 0)], model, 0).similarity
    ba = authenticate(store, "y", "a", clips[ClipId(0, 0, 0)], model, 0).similarity
    assert ab == ba
