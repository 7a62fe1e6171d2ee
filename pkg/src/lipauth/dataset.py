"""Preprocessed clips of a generated corpus, keyed by (client, phrase, emotion)."""

from __future__ import annotations

from pathlib import Path
from typing import Iterable, NamedTuple, Optional

import numpy as np

from . import clipio
from .errors import UsageError
from .preprocess import PreprocessConfig, preprocess_clip
from .synthcorpus import CorpusIOError, load_manifest


class ClipId(NamedTuple):
    client: int
    phrase: int
    emotion: int


class ClipBank:
    """Network-ready clips for every video listed in a corpus manifest."""

    def __init__(self, manifest: dict, clips: dict):
        self.manifest = manifest
        self.clips = clips
        self.phrases = list(manifest["phrases"])
        self.emotions = list(manifest["emotions"])

    def split(self, name: str) -> list:
        try:
            return list(self.manifest["splits"][name])
        except KeyError:
            raise UsageError(f"unknown split {name!r}") from None

    def stack(self, ids: Iterable[ClipId]) -> np.ndarray:
        return np.stack([self.clips[tuple(i)] for i in ids])

    def ids_for(self, clients: Iterable[int]) -> list:
        clients = set(clients)
        return sorted(k for k in self.clips if k[0] in clients)

    @classmethod
    def load(cls, corpus_dir, cfg: Optional[PreprocessConfig] = None,
             splits: Optional[Iterable[str]] = None) -> "ClipBank":
        """Read and preprocess the videos of the requested splits (all by default).

        A corpus written by ``lipauth preprocess`` (manifest flag
        ``preprocessed``) is read as-is."""
        corpus_dir = Path(corpus_dir)
        manifest = load_manifest(corpus_dir)
        cfg = cfg or PreprocessConfig()
        wanted = None
        if splits is not None:
            wanted = {c for s in splits for c in manifest["splits"][s]}
        clips = {}
        for v in manifest["videos"]:
            if wanted is not None and v["client"] not in wanted:
                continue
            try:
                frames = clipio.read_clip(corpus_dir / v["clip"])
                if manifest.get("preprocessed"):
                    landmarks = None
                else:
                    landmarks = clipio.read_landmarks(corpus_dir / v["landmarks"])
            except OSError as exc:
                raise CorpusIOError(f"{corpus_dir / v['clip']}: {exc}") from exc
            if landmarks is not None:
                frames = preprocess_clip(frames, landmarks, cfg).frames
            clips[ClipId(v["client"], v["phrase"], v["emotion"])] = frames
        return cls(manifest, clips)


def bank_from_config(cfg, pre_cfg: Optional[PreprocessConfig] = None,
                     clients: Optional[Iterable[int]] = None) -> ClipBank:
    """Render and preprocess a corpus in memory (no files); mirrors
    :func:`lipauth.synthcorpus.gen_corpus` followed by :meth:`ClipBank.load`."""
    from .synthcorpus import assign_splits, render_video

    cfg.validate()
    splits = assign_splits(cfg.n_clients, cfg.resolved_split_sizes(), cfg.master_seed)
    wanted = set(range(cfg.n_clients) if clients is None else clients)
    clips = {}
    for c in sorted(wanted):
        for p in range(cfg.n_phrases):
            for e in range(cfg.n_emotions):
                frames, landmarks = render_video(cfg, c, p, e)
                clips[ClipId(c, p, e)] = preprocess_clip(frames, landmarks, pre_cfg).frames
    manifest = {"master_seed": cfg.master_seed, "config": cfg.to_dict(),
                "clients": list(range(cfg.n_clients)), "phrases": list(range(cfg.n_phrases)),
                "emotions": list(range(cfg.n_emotions)), "splits": splits, "videos": []}
    return ClipBank(manifest, clips)
