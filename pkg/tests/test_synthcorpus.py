"""Procedural corpus: determinism, trait separability, layout and splits."""

import itertools
import json

import numpy as np
import pytest

from lipauth import clipio
from lipauth.errors import ConfigError
from lipauth.synthcorpus import (CorpusConfig, EmotionParams, assign_splits, frame_count,
                                 gen_corpus, make_emotion, make_identity, make_phrase,
                                 render_utterance, render_video)


def quiet(tempo=1.0):
    """Emotion with no expression offset and no jitter."""
    return EmotionParams(0, tempo, (0.0, 0.0), 0.0)


def resample(traj, n=200):
    """Landmark trajectory [F, 24, 2] onto a common normalized-time grid."""
    src = np.linspace(0, 1, len(traj))
    dst = np.linspace(0, 1, n)
    flat = traj.reshape(len(traj), -1)
    return np.stack([np.interp(dst, src, flat[:, k]) for k in range(flat.shape[1])], 1)


def aperture(landmarks):
    """Inner-lip opening per frame: lower minus upper inner contour, center points."""
    inner = landmarks[:, 12:]
    return inner[:, :, 1].max(axis=1) - inner[:, :, 1].min(axis=1)


# -- parameters ----------------------------------------------------------------------

def test_identity_is_deterministic():
    assert make_identity(7) == make_identity(7)
    a, b = make_identity(1).vector(), make_identity(2).vector()
    assert np.linalg.norm(a[:6] - b[:6]) > 0


def test_hundred_identities_pairwise_distinct():
    vecs = [make_identity(s).vector() for s in range(100)]
    for i, j in itertools.combinations(range(100), 2):
        assert not np.array_equal(vecs[i], vecs[j])


@pytest.mark.parametrize("seed", range(20))
def test_identity_ranges(seed):
    ident = make_identity(seed)
    b = ident.behavior
    assert 0.5 < b.tempo_scale < 2.0 and 0.5 < b.amplitude_scale < 2.0
    assert all(0 <= c <= 1 for c in ident.appearance.color)


def test_phrase_script_bounded_and_stable():
    p = make_phrase(3, master_seed=42)
    traj = p.trajectory(500)
    assert traj.shape == (500, 3) and traj.min() >= 0 and traj.max() <= 1
    np.testing.assert_array_equal(traj, make_phrase(3, master_seed=42).trajectory(500))
    assert 3 <= p.freqs.shape[1] <= 5


def test_emotion_tempo_bounds():
    for e in range(6):
        assert 0.7 <= make_emotion(e).tempo_multiplier <= 1.4
    with pytest.raises(ConfigError):
        EmotionParams(0, 1.5)


# -- rendering ------------------------------------------------------------------------

def test_render_is_deterministic_without_jitter():
    args = (make_identity(3), make_phrase(0), quiet(), 99)
    f1, l1 = render_utterance(*args)
    f2, l2 = render_utterance(*args)
    assert f1.tobytes() == f2.tobytes() and np.array_equal(l1, l2)


def test_render_shapes_and_ranges():
    ident = make_identity(4)
    frames, lm = render_utterance(ident, make_phrase(1), make_emotion(2), 5, frame_size=(64, 96))
    n = frame_count(48, ident, make_emotion(2))
    assert frames.shape == (n, 64, 96, 3) and lm.shape == (n, 24, 2)
    assert frames.dtype == np.float32 and 0 <= frames.min() and frames.max() <= 1
    assert (lm >= 0).all()


def test_tempo_changes_frame_count_not_trajectory_shape():
    ident, phrase = make_identity(11), make_phrase(2)
    _, slow = render_utterance(ident, phrase, quiet(1.0), 5)
    _, fast = render_utterance(ident, phrase, quiet(1.3), 5)
    assert len(fast) < len(slow)
    assert len(fast) == round(48 / (ident.behavior.tempo_scale * 1.3))
    deviation = np.abs(resample(slow) - resample(fast)).max()
    assert deviation < 2.0


def test_identities_differ_on_same_phrase_and_emotion():
    # same take seed, so the mouth sits at the same spot: differences come from identity alone
    rng = np.random.default_rng(0)
    phrase, emo = make_phrase(0), quiet()
    per_pair = []
    for _ in range(20):
        s1, s2 = rng.choice(1000, size=2, replace=False)
        _, a = render_utterance(make_identity(int(s1)), phrase, emo, 1)
        _, b = render_utterance(make_identity(int(s2)), phrase, emo, 1)
        dist = np.linalg.norm(resample(a, 64).reshape(64, 24, 2) - resample(b, 64).reshape(64, 24, 2), axis=-1)
        per_pair.append(dist.mean())
    assert np.mean(per_pair) > 1.0
    assert min(per_pair) > 0.5


def test_phrases_have_uncorrelated_aperture_series():
    corrs = []
    for client in range(5):
        ident = make_identity(client)
        series = []
        for p in range(4):
            _, lm = render_utterance(ident, make_phrase(p, 42), quiet(), 3)
            series.append(np.interp(np.linspace(0, 1, 100), np.linspace(0, 1, len(lm)), aperture(lm)))
        corrs += [np.corrcoef(series[i], series[j])[0, 1] for i, j in itertools.combinations(range(4), 2)]
    assert np.mean(corrs) < 0.5


def test_physiological_separability(default_bank):
    """Time-averaged crops differ more across clients than across one client's emotions."""
    means = {k: v.mean(axis=0) for k, v in default_bank.clips.items()}
    inter, intra = [], []
    for (c, p, e), (c2, p2, e2) in itertools.combinations(sorted(means), 2):
        if p != p2:
            continue
        d = np.linalg.norm(means[(c, p, e)] - means[(c2, p2, e2)])
        if c == c2:
            intra.append(d)
        elif e == e2:
            inter.append(d)
    assert np.mean(inter) / np.mean(intra) > 2.0


# -- corpus layout -----------------------------------------------------------------------

def test_config_needs_two_emotions():
    with pytest.raises(ConfigError, match="positive"):
        CorpusConfig(n_emotions=1).validate()


def test_default_split_sizes():
    assert CorpusConfig().resolved_split_sizes() == (12, 4, 4)


def test_paper_scale_splits_are_disjoint():
    splits = assign_splits(88, (66, 11, 11), master_seed=0)
    sets = [set(splits[k]) for k in ("train", "val", "test")]
    assert [len(s) for s in sets] == [66, 11, 11]
    assert not (sets[0] & sets[1] or sets[0] & sets[2] or sets[1] & sets[2])
    assert set().union(*sets) == set(range(88))


def test_gen_corpus_layout_and_determinism(tmp_path):
    cfg = CorpusConfig(n_clients=3, n_phrases=2, n_emotions=2, frames_per_video=12, split_sizes=(1, 1, 1))
    m1 = gen_corpus(cfg, tmp_path / "a")
    gen_corpus(cfg, tmp_path / "b")
    assert len(m1["videos"]) == 12
    assert (tmp_path / "a/client_2/phrase_1/emotion_0.clip").exists()
    assert (tmp_path / "a/client_2/phrase_1/emotion_0.landmarks.csv").exists()
    assert (tmp_path / "a/manifest.json").read_bytes() == (tmp_path / "b/manifest.json").read_bytes()
    for v in m1["videos"]:
        assert (tmp_path / "a" / v["clip"]).read_bytes() == (tmp_path / "b" / v["clip"]).read_bytes()
    manifest = json.loads((tmp_path / "a/manifest.json").read_text())
    assert manifest["master_seed"] == 42
    splits = [set(manifest["splits"][k]) for k in ("train", "val", "test")]
    assert sum(len(s) for s in splits) == len(set().union(*splits)) == 3
    frames = clipio.read_clip(tmp_path / "a" / m1["videos"][5]["clip"])
    v = m1["videos"][5]
    ref, _ = render_video(cfg, v["client"], v["phrase"], v["emotion"])
    assert frames.tobytes() == ref.tobytes()


def test_master_seed_changes_corpus():
    a, _ = render_video(CorpusConfig(master_seed=1), 0, 0, 0)
    b, _ = render_video(CorpusConfig(master_seed=2), 0, 0, 0)
    assert a.shape != b.shape or not np.array_equal(a, b)
