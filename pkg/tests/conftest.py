"""Shared fixtures: rendered corpora (in memory) and small model configs."""

import time
from dataclasses import dataclass

import numpy as np
import pytest

from lipauth.dataset import bank_from_config
from lipauth.slowfast import SlowFastConfig, SlowFastModel, StageConfig, build
from lipauth.synthcorpus import CorpusConfig
from lipauth.triplets import TrainConfig, TrainHistory, train

# "A<n> PASS|FAIL: ..." lines from the acceptance suite, echoed in the terminal summary
ACCEPTANCE_LINES = []

# 6 clients (2 train / 2 val / 2 test), 2 phrases, 2 emotions, short takes
TINY_CORPUS = dict(n_clients=6, n_phrases=2, n_emotions=2, frames_per_video=16, split_sizes=(2, 2, 2))


def tiny_model_config(**overrides) -> SlowFastConfig:
    cfg = dict(stages=[StageConfig(8), StageConfig(16)], embed_dim=16)
    cfg.update(overrides)
    return SlowFastConfig(**cfg)


@pytest.fixture(scope="session")
def tiny_corpus_config():
    return CorpusConfig(**TINY_CORPUS)


@pytest.fixture(scope="session")
def tiny_bank(tiny_corpus_config):
    return bank_from_config(tiny_corpus_config)


@pytest.fixture(scope="session")
def default_bank():
    """The full default corpus (20 clients x 4 phrases x 3 emotions), preprocessed."""
    return bank_from_config(CorpusConfig())


@pytest.fixture
def tiny_model():
    return build(tiny_model_config(), seed=0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@dataclass
class DeskRun:
    model: SlowFastModel
    history: TrainHistory
    seconds: float
    run_dir: object


@pytest.fixture(scope="session")
def desk_run(default_bank, tmp_path_factory):
    """The default desk model trained once with the default TrainConfig (seed 0)."""
    run_dir = tmp_path_factory.mktemp("desk_run")
    start = time.perf_counter()
    model, history = train(build(SlowFastConfig(), seed=0), default_bank, TrainConfig(), run_dir=run_dir)
    return DeskRun(model, history, time.perf_counter() - start, run_dir)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
