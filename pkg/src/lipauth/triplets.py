"""Triplet algebra and Siamese training.

A triplet is (anchor, positive, negative): the positive is another take of
the anchor's client uttering the same phrase; anything else is a negative,
including the same client uttering a different phrase.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterator, Optional, Sequence

import numpy as np

from .dataset import ClipBank, ClipId
from .errors import NonFiniteLossError, UsageError
from .slowfast import SlowFastModel, save_model
from .tensor import ops
from .tensor.checkpoint import atomic_write
from .tensor.optim import Optimizer, OptimizerConfig
from .tensor.tensor import Tape, backward

log = logging.getLogger(__name__)

EASY, SEMI_HARD, HARD = "easy", "semi_hard", "hard"
NEGATIVE_MODES = ("all", "same_client", "same_phrase")
MAX_ENUMERATION = 10 ** 6


@dataclass(frozen=True)
class TripletSpec:
    anchor: ClipId
    positive: ClipId
    negative: ClipId
    hardness: Optional[str] = None

    def is_valid(self) -> bool:
        a, p, n = self.anchor, self.positive, self.negative
        positive_ok = a.client == p.client and a.phrase == p.phrase and a != p
        negative_ok = n.client != a.client or n.phrase != a.phrase
        return positive_ok and negative_ok


# -- distances and losses ------------------------------------------------------

def cosine_distance(a, b) -> float:
    """1 - cos(a, b) for plain vectors."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise UsageError("cosine distance of a zero vector is undefined")
    cos = np.dot(a, b) / (na * nb)
    return float(1.0 - np.clip(cos, -1.0, 1.0))  # rounding can push |cos| past 1


def triplet_loss(dap: float, dan: float, margin: float) -> float:
    return max(dap - dan + margin, 0.0)


def batch_cost(losses: Sequence[float]) -> tuple:
    """(sum, mean) of per-triplet losses."""
    losses = np.asarray(losses, dtype=np.float64)
    if losses.size == 0:
        raise UsageError("batch_cost of an empty batch")
    total = float(losses.sum())
    return total, total / losses.size


def classify_triplet(dap: float, dan: float, margin: float) -> str:
    if dan <= dap:
        return HARD
    if dap + margin < dan:
        return EASY
    return SEMI_HARD


# -- the triplet universe --------------------------------------------------------

def _check_sizes(P: int, R: int, E: int) -> None:
    if P < 2 or R < 2 or E < 2:
        raise UsageError(f"need P, R, E >= 2 (got P={P}, R={R}, E={E})")


def negatives_per_anchor(P: int, R: int, E: int, mode: str = "all") -> int:
    if mode == "all":
        return (P - 1) * R * E + (R - 1) * E
    if mode == "same_client":
        return (R - 1) * E
    if mode == "same_phrase":
        return (P - 1) * E
    raise UsageError(f"unknown negative mode {mode!r}")


def triplet_universe_size(P: int, R: int, E: int, mode: str = "all") -> int:
    """Anchors x positives x negatives."""
    _check_sizes(P, R, E)
    return P * R * E * (E - 1) * negatives_per_anchor(P, R, E, mode)


def enumerate_triplets(P: int, R: int, E: int) -> Iterator[TripletSpec]:
    """Every valid triplet over client/phrase/emotion indices, by brute force."""
    _check_sizes(P, R, E)
    if P * R * E > MAX_ENUMERATION or triplet_universe_size(P, R, E) > MAX_ENUMERATION:
        raise UsageError("universe too large to enumerate")
    clips = [ClipId(c, p, e) for c in range(P) for p in range(R) for e in range(E)]
    for a in clips:
        for pos in clips:
            if pos.client != a.client or pos.phrase != a.phrase or pos == a:
                continue
            for neg in clips:
                if neg.client == a.client and neg.phrase == a.phrase:
                    continue
                yield TripletSpec(a, pos, neg)


def decode_triplet(k: int, clients: Sequence[int], phrases: Sequence[int],
                   emotions: Sequence[int], mode: str = "all") -> TripletSpec:
    """Map a flat index in ``[0, universe size)`` to its triplet."""
    P, R, E = len(clients), len(phrases), len(emotions)
    n_neg = negatives_per_anchor(P, R, E, mode)
    k, neg = divmod(int(k), n_neg)
    anchor, pos = divmod(k, E - 1)
    ci, rest = divmod(anchor, R * E)
    pi, ei = divmod(rest, E)
    pe = pos if pos < ei else pos + 1

    if mode == "same_client":
        nc, (np_, ne) = ci, divmod(neg, E)
        np_ = np_ if np_ < pi else np_ + 1
    elif mode == "same_phrase":
        oc, ne = divmod(neg, E)
        nc, np_ = (oc if oc < ci else oc + 1), pi
    elif neg < (P - 1) * R * E:
        oc, rest = divmod(neg, R * E)
        nc = oc if oc < ci else oc + 1
        np_, ne = divmod(rest, E)
    else:
        np_, ne = divmod(neg - (P - 1) * R * E, E)
        nc, np_ = ci, (np_ if np_ < pi else np_ + 1)

    c, ph, em = clients, phrases, emotions
    return TripletSpec(ClipId(c[ci], ph[pi], em[ei]), ClipId(c[ci], ph[pi], em[pe]),
                       ClipId(c[nc], ph[np_], em[ne]))


def sample_indices(total: int, batch_size: int, rng: np.random.Generator) -> list:
    """``batch_size`` distinct uniform draws from ``range(total)``."""
    if batch_size > total:
        raise UsageError(f"universe of {total} triplets is smaller than batch size {batch_size}")
    seen, out = set(), []
    while len(out) < batch_size:
        for k in rng.integers(0, total, size=batch_size - len(out)):
            k = int(k)
            if k not in seen:
                seen.add(k)
                out.append(k)
    return out


def sample_batch(manifest, batch_size: int, rng: np.random.Generator, split: str = "train",
                 clients: Optional[Sequence[int]] = None, mode: str = "all") -> list:
    """Draw a batch uniformly from the split's triplet universe without
    materializing it. ``clients`` overrides the split's client list."""
    if isinstance(manifest, ClipBank):
        manifest = manifest.manifest
    clients = list(manifest["splits"][split] if clients is None else clients)
    phrases, emotions = list(manifest["phrases"]), list(manifest["emotions"])
    total = triplet_universe_size(len(clients), len(phrases), len(emotions), mode)
    return [decode_triplet(k, clients, phrases, emotions, mode)
            for k in sample_indices(total, batch_size, rng)]


# -- training --------------------------------------------------------------------

@dataclass
class TrainConfig:
    margin: float = 0.7
    batch_size: int = 64
    max_iterations: int = 2000
    stop_threshold: float = 0.05
    smoothing_window: int = 50
    optimizer: OptimizerConfig = field(default_factory=lambda: OptimizerConfig("adam", 2e-3))
    seed: int = 0
    negative_mode: str = "all"
    checkpoint_every: int = 0
    train_clients: Optional[list] = None

    def __post_init__(self):
        if isinstance(self.optimizer, dict):
            self.optimizer = OptimizerConfig(**self.optimizer)

    def validate(self) -> None:
        if self.margin <= 0:
            raise UsageError("margin must be positive")
        if self.batch_size < 1 or self.max_iterations < 0 or self.smoothing_window < 1:
            raise UsageError("batch_size and smoothing_window must be >= 1, max_iterations >= 0")
        if self.negative_mode not in NEGATIVE_MODES:
            raise UsageError(f"negative_mode must be one of {NEGATIVE_MODES}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["optimizer"]["betas"] = list(d["optimizer"]["betas"])
        d["stop_threshold"] = _json_float(self.stop_threshold)
        return d


def _json_float(v: float):
    return v if np.isfinite(v) else ("inf" if v > 0 else "-inf")


@dataclass
class TrainHistory:
    window: int = 50
    mean_loss: list = field(default_factory=list)
    sum_loss: list = field(default_factory=list)
    smoothed_loss: list = field(default_factory=list)
    stop_iteration: Optional[int] = None
    stopped_early: bool = False

    def append(self, mean: float, total: float) -> float:
        self.mean_loss.append(mean)
        self.sum_loss.append(total)
        recent = self.mean_loss[-self.window:]
        smoothed = float(np.mean(recent))
        self.smoothed_loss.append(smoothed)
        return smoothed

    def __len__(self):
        return len(self.mean_loss)

    def write_csv(self, path) -> None:
        rows = ["iteration,mean_loss,smoothed_loss"]
        rows += [f"{i},{m!r},{s!r}" for i, (m, s) in enumerate(zip(self.mean_loss, self.smoothed_loss))]
        atomic_write(path, ("\n".join(rows) + "\n").encode())


def triplet_forward(model: SlowFastModel, bank: ClipBank, specs: Sequence[TripletSpec], margin: float):
    """Embed the batch's distinct clips once (shared weights), then gather
    anchor/positive/negative rows. Returns (mean_loss, per-triplet losses, dap, dan) tensors."""
    index, unique = {}, []
    for s in specs:
        for cid in (s.anchor, s.positive, s.negative):
            if cid not in index:
                index[cid] = len(unique)
                unique.append(cid)
    emb = model.forward(bank.stack(unique))
    a = ops.take(emb, [index[s.anchor] for s in specs])
    p = ops.take(emb, [index[s.positive] for s in specs])
    n = ops.take(emb, [index[s.negative] for s in specs])
    dap = ops.cosine_distance(a, p)
    dan = ops.cosine_distance(a, n)
    losses = ops.relu(ops.add(ops.sub(dap, dan), np.asarray(margin, dtype=dap.dtype)))
    return ops.reduce_mean(losses), losses, dap, dan


def train(model: SlowFastModel, bank: ClipBank, cfg: TrainConfig,
          run_dir=None, progress=None) -> tuple:
    """Optimize the batch-mean triplet loss until the moving-average loss
    drops below ``stop_threshold`` or ``max_iterations`` is reached."""
    cfg.validate()
    clients = cfg.train_clients if cfg.train_clients is not None else bank.split("train")
    if not clients:
        raise UsageError("training split is empty")
    expected = (model.config.clip_length, *model.config.input_shape)
    sample = next(iter(bank.clips.values()))
    if tuple(sample.shape) != expected:
        raise UsageError(f"clip shape {sample.shape} does not match model input {expected}")

    rng = np.random.default_rng(cfg.seed)
    opt = Optimizer(cfg.optimizer)
    history = TrainHistory(window=cfg.smoothing_window)
    run_dir = Path(run_dir) if run_dir is not None else None
    if run_dir is not None:
        atomic_write(run_dir / "config.json",
                     json.dumps(cfg.to_dict(), indent=2, sort_keys=True).encode())
    t0 = time.time()
    for it in range(cfg.max_iterations):
        batch_seed = int(rng.integers(2 ** 63))
        specs = sample_batch(bank.manifest, cfg.batch_size, np.random.default_rng(batch_seed),
                             clients=clients, mode=cfg.negative_mode)
        with Tape() as tape:
            loss, losses, _, _ = triplet_forward(model, bank, specs, cfg.margin)
        value = float(loss.data)
        if not np.isfinite(value):
            raise NonFiniteLossError(it, batch_seed, value)
        backward(tape, np.ones((), dtype=loss.dtype), output=loss)
        opt.step(model.params)
        Optimizer.zero_grad(model.params)
        smoothed = history.append(value, float(losses.data.sum()))
        if progress is not None:
            progress(it, value, smoothed)
        if it % 50 == 0:
            log.info("iter %d loss %.4f smoothed %.4f (%.1fs)", it, value, smoothed, time.time() - t0)
        if run_dir is not None and cfg.checkpoint_every and (it + 1) % cfg.checkpoint_every == 0:
            save_model(model, run_dir / f"checkpoint_{it + 1:06d}.lfa")
        if len(history) >= cfg.smoothing_window and smoothed < cfg.stop_threshold:
            history.stopped_early = True
            break
    history.stop_iteration = len(history)
    if run_dir is not None:
        history.write_csv(run_dir / "history.csv")
        save_model(model, run_dir / "model.lfa")
    return model, history


def mean_separation(model: SlowFastModel, bank: ClipBank, specs: Sequence[TripletSpec]) -> float:
    """Mean of D(A,P) - D(A,N) over ``specs`` (negative is better)."""
    _, _, dap, dan = triplet_forward(model, bank, specs, 0.0)
    return float(np.mean(dap.data - dan.data))
