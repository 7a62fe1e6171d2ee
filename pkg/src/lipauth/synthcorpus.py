"""Procedural lip-video corpus: clients x phrases x emotions.

Each client has static appearance (lip size, thickness, color, corner
shape) and behavioral habits (tempo, articulation amplitude, an idiosyncratic
wobble, asymmetry). Each phrase is a smooth trajectory of mouth controls;
each emotion stretches time, shifts the resting expression and adds jitter.
Frames are rasterized with exact vertical coverage and 4x horizontal
supersampling; 24 landmarks are read off the two lip contours at fixed
arc-length fractions.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import clipio
from .errors import ConfigError, LipAuthError

log = logging.getLogger(__name__)

SKIN = np.array([0.86, 0.66, 0.56])
MOUTH = np.array([0.18, 0.06, 0.07])
EMOTION_NAMES = ("neutral", "happy", "sad", "anger", "disgust", "fear")
# tempo multiplier, (corner lift, aperture bias), jitter std
_EMOTION_TABLE = {
    "neutral": (1.0, (0.0, 0.0), 0.004),
    "happy": (1.1, (0.08, 0.02), 0.006),
    "sad": (0.85, (-0.06, -0.02), 0.006),
    "anger": (1.25, (-0.04, 0.03), 0.008),
    "disgust": (0.95, (-0.05, -0.01), 0.006),
    "fear": (1.3, (0.03, 0.03), 0.008),
}
# per-take rhythm warp (fraction of the utterance) and pixel noise, per unit jitter_std
_WARP_PER_JITTER = 6.0
_PIXEL_NOISE_PER_JITTER = 3.0
_SUPERSAMPLE = 4
_CONTOUR_SAMPLES = 241


def _rng(*key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(k) for k in key]))


@dataclass(frozen=True)
class Appearance:
    base_width: float
    base_height: float
    lip_thickness: float
    color: tuple
    corner_curvature: float


@dataclass(frozen=True)
class Behavior:
    tempo_scale: float
    amplitude_scale: float
    phase_offset: float
    asymmetry: float


@dataclass(frozen=True)
class IdentityParams:
    appearance: Appearance
    behavior: Behavior

    def vector(self) -> np.ndarray:
        a, b = self.appearance, self.behavior
        return np.array([a.base_width, a.base_height, a.lip_thickness, *a.color,
                         a.corner_curvature, b.tempo_scale, b.amplitude_scale,
                         b.phase_offset, b.asymmetry])


def make_identity(seed: int) -> IdentityParams:
    rng = _rng(0x1D, seed)
    appearance = Appearance(
        base_width=float(rng.uniform(36, 46)),
        base_height=float(rng.uniform(5, 9)),
        lip_thickness=float(rng.uniform(3.0, 7.5)),
        color=tuple(float(v) for v in (rng.uniform(0.45, 0.95), rng.uniform(0.10, 0.45),
                                       rng.uniform(0.15, 0.55))),
        corner_curvature=float(rng.uniform(0.6, 1.8)),
    )
    behavior = Behavior(
        tempo_scale=float(rng.uniform(0.85, 1.2)),
        amplitude_scale=float(rng.uniform(0.65, 1.5)),
        phase_offset=float(rng.uniform(0, 2 * np.pi)),
        asymmetry=float(rng.uniform(-0.3, 0.3)),
    )
    return IdentityParams(appearance, behavior)


@dataclass(frozen=True)
class PhraseScript:
    """Mouth controls (aperture, width, protrusion) over normalized time.

    Each control is a normalized mixture of 3-5 sinusoids, mapped into [0, 1].
    """

    phrase_id: int
    freqs: np.ndarray   # [3, K]
    amps: np.ndarray    # [3, K]
    phases: np.ndarray  # [3, K]

    def at(self, u) -> np.ndarray:
        u = np.atleast_1d(np.asarray(u, dtype=np.float64))
        arg = 2 * np.pi * self.freqs[None] * u[:, None, None] + self.phases[None]
        s = (self.amps[None] * np.sin(arg)).sum(-1) / self.amps.sum(-1)[None]
        return 0.5 + 0.5 * s

    def trajectory(self, n: int = 100) -> np.ndarray:
        return self.at(np.linspace(0, 1, n))


def make_phrase(phrase_id: int, master_seed: int = 0) -> PhraseScript:
    rng = _rng(0x9A, master_seed, phrase_id)
    k = int(rng.integers(3, 6))
    freqs = rng.uniform(0.5, 4.0, size=(3, k))
    amps = rng.uniform(0.3, 1.0, size=(3, k))
    phases = rng.uniform(0, 2 * np.pi, size=(3, k))
    return PhraseScript(phrase_id, freqs, amps, phases)


@dataclass(frozen=True)
class EmotionParams:
    emotion_id: int
    tempo_multiplier: float = 1.0
    expression_offset: tuple = (0.0, 0.0)
    jitter_std: float = 0.0

    def __post_init__(self):
        if not 0.7 <= self.tempo_multiplier <= 1.4:
            raise ConfigError(f"tempo_multiplier {self.tempo_multiplier} outside [0.7, 1.4]")


def make_emotion(emotion_id: int) -> EmotionParams:
    name = EMOTION_NAMES[emotion_id % len(EMOTION_NAMES)]
    tempo, offset, jitter = _EMOTION_TABLE[name]
    return EmotionParams(emotion_id, tempo, offset, jitter)


def _shape_profile(x: np.ndarray, power: float) -> np.ndarray:
    return np.clip(1 - x * x, 0, None) ** power


def _contours(ident: IdentityParams, ctrl: np.ndarray, emo: EmotionParams, u: np.ndarray,
              center: np.ndarray, noise: np.ndarray, x: np.ndarray):
    """Lip contour heights for every frame at normalized abscissae ``x``.

    Returns (xs_px [F, X], y_outer_top, y_inner_top, y_inner_bot, y_outer_bot) each [F, X].
    """
    a, b = ident.appearance, ident.behavior
    corner_lift, aperture_bias = emo.expression_offset
    aperture, width, protrusion = ctrl[:, 0], ctrl[:, 1], ctrl[:, 2]
    wobble = 0.12 * np.sin(2 * np.pi * 2.0 * u + b.phase_offset)
    opening = np.clip(0.5 + b.amplitude_scale * (aperture - 0.5) + aperture_bias + wobble
                      + noise[:, 0], 0.0, 1.0)
    half_w = 0.5 * a.base_width * (1 + 0.18 * b.amplitude_scale * (width - 0.5)) \
        * (1 - 0.12 * protrusion) * (1 + noise[:, 1])
    thick = (a.lip_thickness * (1 + 0.35 * protrusion))[:, None]
    gap = opening * 2.2 * a.base_height

    xs = center[:, :1] + half_w[:, None] * x[None, :]
    mid = center[:, 1:2] - corner_lift * a.base_height * 2.0 * (x * x)[None, :] \
        + b.asymmetry * a.base_height * x[None, :]
    g = _shape_profile(x, 0.7)[None, :]
    f = _shape_profile(x, 0.5 * a.corner_curvature)[None, :]
    # upper lip slightly thinner than lower, Cupid's-bow dip in the center
    bow = 1 - 0.25 * np.exp(-(x / 0.18) ** 2)[None, :]
    inner_top = mid - 0.5 * gap[:, None] * g
    inner_bot = mid + 0.5 * gap[:, None] * g
    outer_top = inner_top - 0.85 * thick * f * bow
    outer_bot = inner_bot + 1.15 * thick * f
    return xs, outer_top, inner_top, inner_bot, outer_bot


def _coverage(top: np.ndarray, bot: np.ndarray, n_rows: int) -> np.ndarray:
    rows = np.arange(n_rows)[:, None]
    return np.clip(np.minimum(bot[None, :], rows + 1) - np.maximum(top[None, :], rows), 0, 1)


def _rasterize(xs_row, ot, it, ib, ob, height, width, lip_color) -> np.ndarray:
    # column sample positions (supersampled), interpolate contour heights there
    sx = (np.arange(width * _SUPERSAMPLE) + 0.5) / _SUPERSAMPLE
    inside = (sx >= xs_row[0]) & (sx <= xs_row[-1])
    curves = [np.where(inside, np.interp(sx, xs_row, c), 0.0) for c in (ot, it, ib, ob)]
    outer = _coverage(curves[0], curves[3], height) * inside
    inner = _coverage(curves[1], curves[2], height) * inside
    lip = np.clip(outer - inner, 0, 1)
    lip = lip.reshape(height, width, _SUPERSAMPLE).mean(-1)
    inner = inner.reshape(height, width, _SUPERSAMPLE).mean(-1)
    bg = np.clip(1 - lip - inner, 0, 1)
    return bg[..., None] * SKIN + lip[..., None] * np.asarray(lip_color) + inner[..., None] * MOUTH


def _arc_points(px: np.ndarray, py: np.ndarray, n: int) -> np.ndarray:
    """``n`` points at fractions k/n of the closed polyline's perimeter."""
    seg = np.hypot(np.diff(px), np.diff(py))
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    if cum[-1] <= 0:
        return np.stack([np.full(n, px[0]), np.full(n, py[0])], -1)
    targets = np.arange(n) / n * cum[-1]
    return np.stack([np.interp(targets, cum, px), np.interp(targets, cum, py)], -1)


def frame_count(frames_per_video: int, ident: IdentityParams, emo: EmotionParams) -> int:
    return max(2, int(round(frames_per_video / (ident.behavior.tempo_scale * emo.tempo_multiplier))))


def render_utterance(ident: IdentityParams, phrase: PhraseScript, emo: EmotionParams, take_seed: int,
                     frames_per_video: int = 48, frame_size: tuple = (64, 96)):
    """Render one take. Returns (frames [F, H, W, 3] float32, landmarks [F, 24, 2])."""
    height, width = frame_size
    n = frame_count(frames_per_video, ident, emo)
    rng = _rng(0x7A, take_seed)
    # per-take scalars are drawn before anything sized by the frame count, so
    # the same take seed places the mouth identically at any tempo
    warp = _WARP_PER_JITTER * emo.jitter_std * rng.uniform(-1, 1)
    base_center = np.array([width / 2, height / 2]) + rng.uniform(-3, 3, size=2)
    u = np.linspace(0.0, 1.0, n)
    # monotone rhythm warp: endpoints fixed, interior shifted by a seeded half-sine
    u_warp = u + warp * np.sin(np.pi * u) / np.pi
    ctrl = phrase.at(u_warp)
    noise = rng.normal(0.0, 1.0, size=(n, 2)) * emo.jitter_std * np.array([4.0, 1.0])
    drift = rng.normal(0.0, 1.0, size=(n, 2)) * emo.jitter_std * 40.0
    center = base_center[None, :] + drift

    x = np.linspace(-1.0, 1.0, _CONTOUR_SAMPLES)
    xs, ot, it, ib, ob = _contours(ident, ctrl, emo, u, center, noise, x)
    frames = np.empty((n, height, width, 3), dtype=np.float32)
    landmarks = np.empty((n, 24, 2))
    for i in range(n):
        frames[i] = _rasterize(xs[i], ot[i], it[i], ib[i], ob[i], height, width,
                               ident.appearance.color)
        # closed loops: top edge left->right, bottom edge right->left
        ox = np.concatenate([xs[i], xs[i][::-1]])
        landmarks[i, :12] = _arc_points(ox, np.concatenate([ot[i], ob[i][::-1]]), 12)
        landmarks[i, 12:] = _arc_points(ox, np.concatenate([it[i], ib[i][::-1]]), 12)
    sigma = _PIXEL_NOISE_PER_JITTER * emo.jitter_std
    if sigma > 0:
        frames += rng.normal(0.0, sigma, size=frames.shape).astype(np.float32)
        np.clip(frames, 0.0, 1.0, out=frames)
    np.clip(landmarks, 0.0, None, out=landmarks)
    return frames, landmarks


@dataclass
class CorpusConfig:
    n_clients: int = 20
    n_phrases: int = 4
    n_emotions: int = 3
    frames_per_video: int = 48
    frame_size: tuple = (64, 96)
    master_seed: int = 42
    split_sizes: Optional[tuple] = None

    def __post_init__(self):
        self.frame_size = tuple(int(v) for v in self.frame_size)
        if self.split_sizes is not None:
            self.split_sizes = tuple(int(v) for v in self.split_sizes)

    def validate(self) -> None:
        if self.n_emotions < 2:
            raise ConfigError(
                "n_emotions must be >= 2: every anchor needs at least one positive "
                "(another emotional take of the same client and phrase)")
        if self.n_emotions > len(EMOTION_NAMES):
            raise ConfigError(f"at most {len(EMOTION_NAMES)} emotions are modeled")
        if self.n_phrases < 1 or self.frames_per_video < 2:
            raise ConfigError("n_phrases must be >= 1 and frames_per_video >= 2")
        if self.n_clients < 3:
            raise ConfigError("n_clients must be >= 3 to form train/val/test splits")
        if min(self.frame_size) < 16:
            raise ConfigError("frame_size too small to hold a mouth")
        sizes = self.resolved_split_sizes()
        if sum(sizes) != self.n_clients or min(sizes) < 1:
            raise ConfigError(f"split sizes {sizes} must be positive and sum to {self.n_clients}")

    def resolved_split_sizes(self) -> tuple:
        if self.split_sizes is not None:
            return tuple(self.split_sizes)
        n_val = max(1, int(round(0.2 * self.n_clients)))
        n_test = max(1, int(round(0.2 * self.n_clients)))
        return (self.n_clients - n_val - n_test, n_val, n_test)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["frame_size"] = list(self.frame_size)
        if self.split_sizes is not None:
            d["split_sizes"] = list(self.split_sizes)
        return d


def assign_splits(n_clients: int, sizes: Sequence[int], master_seed: int) -> dict:
    """Seeded disjoint partition of client indices into train/val/test."""
    order = _rng(0x5B, master_seed).permutation(n_clients)
    n_train, n_val, _ = sizes
    return {
        "train": sorted(int(c) for c in order[:n_train]),
        "val": sorted(int(c) for c in order[n_train:n_train + n_val]),
        "test": sorted(int(c) for c in order[n_train + n_val:]),
    }


def client_seed(master_seed: int, client: int) -> int:
    return int(_rng(0xC1, master_seed, client).integers(2 ** 62))


def take_seed(master_seed: int, client: int, phrase: int, emotion: int) -> int:
    return int(_rng(0x7E, master_seed, client, phrase, emotion).integers(2 ** 62))


def video_relpath(client: int, phrase: int, emotion: int) -> tuple:
    stem = f"client_{client}/phrase_{phrase}/emotion_{emotion}"
    return stem + ".clip", stem + ".landmarks.csv"


def render_video(cfg: CorpusConfig, client: int, phrase: int, emotion: int):
    ident = make_identity(client_seed(cfg.master_seed, client))
    return render_utterance(ident, make_phrase(phrase, cfg.master_seed), make_emotion(emotion),
                            take_seed(cfg.master_seed, client, phrase, emotion),
                            cfg.frames_per_video, cfg.frame_size)


def gen_corpus(cfg: CorpusConfig, out_dir) -> dict:
    """Render every (client, phrase, emotion) video and write the manifest."""
    cfg.validate()
    out_dir = Path(out_dir)
    splits = assign_splits(cfg.n_clients, cfg.resolved_split_sizes(), cfg.master_seed)
    videos = []
    for c in range(cfg.n_clients):
        for p in range(cfg.n_phrases):
            for e in range(cfg.n_emotions):
                frames, landmarks = render_video(cfg, c, p, e)
                clip_rel, lm_rel = video_relpath(c, p, e)
                try:
                    clipio.write_clip(out_dir / clip_rel, frames)
                    clipio.write_landmarks(out_dir / lm_rel, landmarks)
                except OSError as exc:
                    raise CorpusIOError(f"{out_dir / clip_rel}: {exc}") from exc
                videos.append({"client": c, "phrase": p, "emotion": e,
                               "clip": clip_rel, "landmarks": lm_rel, "frames": len(frames)})
        log.debug("rendered client %d", c)
    manifest = {
        "format": "lipauth-corpus/1",
        "master_seed": cfg.master_seed,
        "config": cfg.to_dict(),
        "clients": list(range(cfg.n_clients)),
        "phrases": list(range(cfg.n_phrases)),
        "emotions": list(range(cfg.n_emotions)),
        "emotion_names": list(EMOTION_NAMES[:cfg.n_emotions]),
        "splits": splits,
        "videos": videos,
    }
    text = json.dumps(manifest, indent=2, sort_keys=True) + "\n"
    try:
        clipio.atomic_write(out_dir / "manifest.json", text.encode())
    except OSError as exc:
        raise CorpusIOError(f"{out_dir / 'manifest.json'}: {exc}") from exc
    return manifest


class CorpusIOError(LipAuthError, OSError):
    """Failure reading or writing corpus files; the message carries the path."""


def load_manifest(corpus_dir) -> dict:
    path = Path(corpus_dir) / "manifest.json"
    try:
        return json.loads(path.read_text())
    except OSError as exc:
        raise CorpusIOError(f"{path}: {exc}") from exc
