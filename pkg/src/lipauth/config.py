"""One JSON document configuring a whole run.

Every section is optional in the file; missing keys take the desk-scale
defaults of the owning module. Example::

    {
      "corpus": {"n_clients": 20, "master_seed": 42},
      "preprocess": {"clip_length": 32},
      "model": {"alpha": 8, "beta": "1/8"},
      "train": {"max_iterations": 2000, "optimizer": {"kind": "adam", "lr": 0.002}},
      "eval": {"split": "test", "pair_budget": null, "sweep_step": 0.001},
      "paths": {"corpus": "corpus", "run": "run"}
    }
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional

from .errors import ConfigError, LipAuthError
from .preprocess import PreprocessConfig
from .slowfast import SlowFastConfig
from .synthcorpus import CorpusConfig
from .triplets import TrainConfig


@dataclass
class EvalConfig:
    split: str = "test"
    pair_budget: Optional[int] = None  # None scores every triplet of the split
    sweep_step: float = 0.001
    seed: int = 0


@dataclass
class Paths:
    corpus: Optional[str] = None
    run: Optional[str] = None
    store: Optional[str] = None


@dataclass
class RunConfig:
    corpus: CorpusConfig = field(default_factory=CorpusConfig)
    preprocess: PreprocessConfig = field(default_factory=PreprocessConfig)
    model: SlowFastConfig = field(default_factory=SlowFastConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    paths: Paths = field(default_factory=Paths)

    def validate(self) -> None:
        try:
            self.corpus.validate()
            self.preprocess.validate()
            self.model.validate()
            self.train.validate()
        except ConfigError:
            raise
        except LipAuthError as exc:
            raise ConfigError(str(exc)) from None
        pre, m = self.preprocess, self.model
        if pre.clip_length != m.clip_length:
            raise ConfigError(
                f"preprocess clip_length {pre.clip_length} differs from model clip_length {m.clip_length}")
        if (pre.target_height, pre.target_width) != tuple(m.input_shape[:2]):
            raise ConfigError(
                f"preprocess target {pre.target_width}x{pre.target_height} does not match "
                f"model input {m.input_shape[1]}x{m.input_shape[0]}")
        if self.eval.sweep_step <= 0:
            raise ConfigError("eval.sweep_step must be positive")
        if self.eval.split not in ("train", "val", "test"):
            raise ConfigError(f"eval.split must be train, val or test, not {self.eval.split!r}")

    def to_dict(self) -> dict:
        return {
            "corpus": self.corpus.to_dict(),
            "preprocess": asdict(self.preprocess),
            "model": self.model.to_dict(),
            "train": self.train.to_dict(),
            "eval": asdict(self.eval),
            "paths": asdict(self.paths),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config sections: {sorted(unknown)}")
        sections = {"corpus": CorpusConfig, "preprocess": PreprocessConfig, "model": SlowFastConfig,
                    "train": TrainConfig, "eval": EvalConfig, "paths": Paths}
        kwargs = {}
        for name, typ in sections.items():
            body = dict(d.get(name) or {})
            if name == "train" and isinstance(body.get("stop_threshold"), str):
                body["stop_threshold"] = float(body["stop_threshold"])
            try:
                kwargs[name] = typ(**body)
            except (TypeError, ValueError, LipAuthError) as exc:
                raise ConfigError(f"section {name!r}: {exc}") from None
        return cls(**kwargs)


def load_config(path=None, validate: bool = True) -> RunConfig:
    """Read a RunConfig from JSON (defaults when ``path`` is None)."""
    if path is None:
        cfg = RunConfig()
    else:
        try:
            data = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: top level must be an object")
        cfg = RunConfig.from_dict(data)
    if validate:
        cfg.validate()
    return cfg
