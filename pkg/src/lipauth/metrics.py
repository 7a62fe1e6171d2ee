"""Verification metrics: genuine/imposter scoring, FAR/FRR, threshold sweep, EER.

A request is accepted iff its cosine similarity is >= the threshold. FRR is
the fraction of genuine scores below the threshold; FAR the fraction of
imposter scores at or above it (each over its own class count).
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .dataset import ClipBank
from .errors import ProtocolViolationError, UsageError
from .slowfast import SlowFastModel, embed
from .tensor.checkpoint import atomic_write
from .triplets import decode_triplet, sample_indices, triplet_universe_size


def cosine_similarity(a, b) -> float:
    """Cosine similarity of two embeddings, computed in float64.

    Both the evaluator and the authentication store use this function so
    that their accept/reject decisions agree bit for bit.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise UsageError("cosine similarity of a zero vector is undefined")
    return float(np.clip(np.dot(a, b) / (na * nb), -1.0, 1.0))


@dataclass
class ScoreSet:
    genuine: list = field(default_factory=list)
    imposter: list = field(default_factory=list)
    pairs: list = field(default_factory=list)  # (anchor, other, is_genuine) per score, in order

    def arrays(self):
        return np.asarray(self.genuine, dtype=np.float64), np.asarray(self.imposter, dtype=np.float64)


@dataclass
class VerificationReport:
    thresholds: np.ndarray
    far: np.ndarray
    frr: np.ndarray
    eer: float
    eer_threshold: float
    sweep_step: float
    exact_eer: Optional[float] = None
    exact_eer_threshold: Optional[float] = None
    n_genuine: int = 0
    n_imposter: int = 0

    @property
    def curve(self) -> list:
        return list(zip(self.thresholds.tolist(), self.far.tolist(), self.frr.tolist()))

    def to_dict(self) -> dict:
        return {
            "curve": [list(row) for row in self.curve],
            "eer": self.eer,
            "eer_threshold": self.eer_threshold,
            "sweep_step": self.sweep_step,
            "exact_eer": self.exact_eer,
            "exact_eer_threshold": self.exact_eer_threshold,
            "n_genuine": self.n_genuine,
            "n_imposter": self.n_imposter,
        }

    def write_json(self, path) -> None:
        atomic_write(path, (json.dumps(self.to_dict(), indent=2) + "\n").encode())


def check_open_set(manifest: dict, split: str, train_clients: Optional[Sequence[int]] = None) -> list:
    """Return the split's clients; raise if any of them was used for training."""
    try:
        clients = list(manifest["splits"][split])
    except KeyError:
        raise UsageError(f"unknown split {split!r}") from None
    train = set(manifest["splits"]["train"] if train_clients is None else train_clients)
    shared = sorted(train.intersection(clients))
    if shared:
        raise ProtocolViolationError(
            f"split {split!r} shares clients {shared} with training (open-set protocol)")
    return clients


def score_pairs(model: SlowFastModel, bank: ClipBank, split: str, budget: int,
                rng: np.random.Generator, train_clients: Optional[Sequence[int]] = None) -> ScoreSet:
    """Sample ``budget`` triplets from the split and score cos(A,P) as genuine
    and cos(A,N) as imposter. A budget at least the universe size scores the
    whole universe."""
    clients = check_open_set(bank.manifest, split, train_clients)
    scores = ScoreSet()
    if budget <= 0:
        return scores
    phrases, emotions = bank.phrases, bank.emotions
    total = triplet_universe_size(len(clients), len(phrases), len(emotions))
    ks = range(total) if budget >= total else sample_indices(total, budget, rng)
    specs = [decode_triplet(k, clients, phrases, emotions) for k in ks]

    # one clip per forward pass, exactly as the authentication path embeds
    emb = {cid: embed(model, bank.clips[cid]) for cid in bank.ids_for(clients)}
    for s in specs:
        a = emb[s.anchor]
        scores.genuine.append(cosine_similarity(a, emb[s.positive]))
        scores.pairs.append((s.anchor, s.positive, True))
        scores.imposter.append(cosine_similarity(a, emb[s.negative]))
        scores.pairs.append((s.anchor, s.negative, False))
    return scores


def _nonempty(scores: ScoreSet):
    g, i = scores.arrays()
    if g.size == 0 or i.size == 0:
        raise UsageError("FAR/FRR need non-empty genuine and imposter lists")
    return np.sort(g), np.sort(i)


def far_frr(scores: ScoreSet, threshold: float) -> tuple:
    g, i = _nonempty(scores)
    frr = float(np.count_nonzero(g < threshold)) / g.size
    far = float(np.count_nonzero(i >= threshold)) / i.size
    return far, frr


def sweep_thresholds(step: float = 0.001, lo: float = 0.0, hi: float = 1.0) -> np.ndarray:
    if step <= 0:
        raise UsageError("sweep step must be positive")
    n = int(np.floor((hi - lo) / step + 1e-9)) + 1
    return np.round(lo + step * np.arange(n), 12)


def sweep(scores: ScoreSet, step: float = 0.001, lo: float = 0.0, hi: float = 1.0) -> list:
    """(threshold, FAR, FRR) at lo, lo+step, ..., hi."""
    thresholds = sweep_thresholds(step, lo, hi)
    far, frr = _rates(scores, thresholds)
    return list(zip(thresholds.tolist(), far.tolist(), frr.tolist()))


def _rates(scores: ScoreSet, thresholds: np.ndarray):
    g, i = _nonempty(scores)
    frr = np.searchsorted(g, thresholds, side="left") / g.size
    far = (i.size - np.searchsorted(i, thresholds, side="left")) / i.size
    return far, frr


def eer(curve) -> tuple:
    """Grid point minimizing |FAR - FRR|; returns ((FAR + FRR) / 2, threshold).
    Ties go to the lower threshold."""
    arr = np.asarray(curve, dtype=np.float64)
    if arr.size == 0:
        raise UsageError("empty curve")
    order = np.argsort(arr[:, 0], kind="stable")
    arr = arr[order]
    k = int(np.argmin(np.abs(arr[:, 1] - arr[:, 2])))
    return float((arr[k, 1] + arr[k, 2]) / 2), float(arr[k, 0])


def exact_eer(scores: ScoreSet) -> tuple:
    """EER from the sorted score lists, linearly interpolated at the crossing.

    FAR/FRR are evaluated just at every distinct score (plus the extremes);
    the crossing of FAR - FRR is interpolated between the two bracketing
    operating points. Returns (eer, threshold).
    """
    g, i = _nonempty(scores)
    cand = np.unique(np.concatenate([g, i]))
    cand = np.concatenate([cand, [np.nextafter(cand[-1], np.inf)]])
    frr = np.searchsorted(g, cand, side="left") / g.size
    far = (i.size - np.searchsorted(i, cand, side="left")) / i.size
    d = far - frr
    k = int(np.argmax(d <= 0))
    if d[k] == 0 or k == 0:
        return float((far[k] + frr[k]) / 2), float(cand[k])
    lam = d[k - 1] / (d[k - 1] - d[k])
    value = far[k - 1] + lam * (far[k] - far[k - 1])
    return float(value), float(cand[k - 1] + lam * (cand[k] - cand[k - 1]))


def evaluate(scores: ScoreSet, step: float = 0.001, lo: float = 0.0, hi: float = 1.0) -> VerificationReport:
    thresholds = sweep_thresholds(step, lo, hi)
    far, frr = _rates(scores, thresholds)
    value, threshold = eer(np.stack([thresholds, far, frr], axis=1))
    ex, ex_t = exact_eer(scores)
    return VerificationReport(thresholds, far, frr, value, threshold, step, ex, ex_t,
                              len(scores.genuine), len(scores.imposter))


def roc_export(report: VerificationReport, path) -> None:
    """CSV ``threshold,far,frr`` (6 significant digits, ascending thresholds)
    followed by ``# eer=`` and ``# eer_threshold=`` comment rows."""
    order = np.argsort(report.thresholds, kind="stable")
    lines = ["threshold,far,frr"]
    for k in order:
        lines.append(f"{report.thresholds[k]:.6g},{report.far[k]:.6g},{report.frr[k]:.6g}")
    lines.append(f"# eer={report.eer:.6g}")
    lines.append(f"# eer_threshold={report.eer_threshold:.6g}")
    atomic_write(path, ("\n".join(lines) + "\n").encode())


def read_roc(path) -> dict:
    rows, meta = [], {}
    with open(path, newline="") as fh:
        for line in fh:
            line = line.strip()
            if line.startswith("#"):
                key, _, value = line[1:].strip().partition("=")
                meta[key] = float(value)
            elif line and not line.startswith("threshold"):
                rows.append([float(v) for v in next(csv.reader([line]))])
    arr = np.asarray(rows, dtype=np.float64).reshape(-1, 3)
    return {"thresholds": arr[:, 0], "far": arr[:, 1], "frr": arr[:, 2], **meta}
