"""``lipauth`` command-line interface.

Exit codes:

    0  success
    1  other lipauth error (e.g. unusable landmarks)
    2  usage or configuration error
    3  I/O error or corrupt file
    4  training aborted on a non-finite loss
    5  open-set protocol violation (evaluation clients overlap training)
    6  client/phrase not enrolled
    7  client/phrase already enrolled
    8  model fingerprint differs from the store's
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__, authstore, clipio
from .config import RunConfig, load_config
from .dataset import ClipBank
from .errors import (ConfigError, ConflictError, FormatError, LipAuthError, ModelMismatchError,
                     NonFiniteLossError, NotEnrolledError, ProtocolViolationError, UsageError)
from .metrics import evaluate, roc_export, score_pairs
from .preprocess import preprocess_clip
from .slowfast import build, load_model
from .synthcorpus import gen_corpus, load_manifest
from .tensor.checkpoint import atomic_write
from .triplets import train

log = logging.getLogger("lipauth")

EXIT_OK, EXIT_ERROR, EXIT_USAGE, EXIT_IO = 0, 1, 2, 3
EXIT_NONFINITE, EXIT_PROTOCOL = 4, 5
EXIT_NOT_ENROLLED, EXIT_CONFLICT, EXIT_MISMATCH = 6, 7, 8

# first match wins, so subclasses go before their bases
_EXIT_CODES = [
    (NotEnrolledError, EXIT_NOT_ENROLLED),
    (ConflictError, EXIT_CONFLICT),
    (ModelMismatchError, EXIT_MISMATCH),
    (ProtocolViolationError, EXIT_PROTOCOL),
    (NonFiniteLossError, EXIT_NONFINITE),
    (ConfigError, EXIT_USAGE),
    (UsageError, EXIT_USAGE),
    (FormatError, EXIT_IO),
    (OSError, EXIT_IO),
    (LipAuthError, EXIT_ERROR),
]


def exit_code_for(exc: BaseException) -> int:
    for typ, code in _EXIT_CODES:
        if isinstance(exc, typ):
            return code
    raise exc


def _dump_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _config(args) -> RunConfig:
    cfg = load_config(getattr(args, "config", None), validate=False)
    if getattr(args, "seed", None) is not None:
        cfg.train.seed = args.seed
    if getattr(args, "max_iterations", None) is not None:
        cfg.train.max_iterations = args.max_iterations
    cfg.validate()
    return cfg


# -- commands ---------------------------------------------------------------------

def cmd_gen_corpus(args) -> int:
    cfg = _config(args)
    manifest = gen_corpus(cfg.corpus, args.out)
    print(_dump_json({"out": str(args.out), "videos": len(manifest["videos"]),
                      "splits": manifest["splits"]}), end="")
    return EXIT_OK


def cmd_preprocess(args) -> int:
    cfg = _config(args)
    if args.clip is not None:
        frames = _read_raw_clip(Path(args.clip), args.landmarks, cfg)
        clipio.write_clip(args.out, frames)
        return EXIT_OK
    if args.corpus is None:
        raise UsageError("preprocess needs --corpus or --clip")
    src, out = Path(args.corpus), Path(args.out)
    manifest = load_manifest(src)
    if manifest.get("preprocessed"):
        raise UsageError(f"{src} is already preprocessed")
    videos = []
    for v in manifest["videos"]:
        frames = clipio.read_clip(src / v["clip"])
        landmarks = clipio.read_landmarks(src / v["landmarks"])
        clip = preprocess_clip(frames, landmarks, cfg.preprocess)
        clipio.write_clip(out / v["clip"], clip.frames)
        videos.append({**v, "landmarks": None, "frames": len(clip.frames)})
    manifest = {**manifest, "videos": videos, "preprocessed": True,
                "preprocess": asdict(cfg.preprocess)}
    atomic_write(out / "manifest.json", _dump_json(manifest).encode())
    print(_dump_json({"out": str(out), "videos": len(videos)}), end="")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _config(args)
    corpus = args.corpus or cfg.paths.corpus
    out = args.out or cfg.paths.run
    if corpus is None or out is None:
        raise UsageError("train needs --corpus and --out (or paths in the config)")
    splits = None if cfg.train.train_clients is not None else ["train"]
    bank = ClipBank.load(corpus, cfg.preprocess, splits=splits)
    model = build(cfg.model, seed=cfg.train.seed)
    out = Path(out)
    atomic_write(out / "run_config.json", _dump_json(cfg.to_dict()).encode())

    def progress(it, loss, smoothed):
        if args.verbose and it % 10 == 0:
            log.info("iteration %d loss %.4f smoothed %.4f", it, loss, smoothed)

    _, history = train(model, bank, cfg.train, run_dir=out, progress=progress)
    print(_dump_json({
        "checkpoint": str(out / "model.lfa"),
        "iterations": len(history),
        "stopped_early": history.stopped_early,
        "final_smoothed_loss": history.smoothed_loss[-1] if len(history) else None,
    }), end="")
    return EXIT_OK


def _train_clients_for(checkpoint: Path):
    """Training clients recorded next to a checkpoint by ``train``, if any."""
    meta = checkpoint.parent / "config.json"
    if meta.exists():
        clients = json.loads(meta.read_text()).get("train_clients")
        if clients is not None:
            return [int(c) for c in clients]
    return None


def cmd_eval(args) -> int:
    cfg = _config(args)
    split = args.split or cfg.eval.split
    if split == "train":
        raise ProtocolViolationError("refusing to evaluate on the training split (open-set protocol)")
    checkpoint = Path(args.checkpoint)
    model = load_model(checkpoint)
    corpus = args.corpus or cfg.paths.corpus
    if corpus is None:
        raise UsageError("eval needs --corpus (or paths.corpus in the config)")
    bank = ClipBank.load(corpus, cfg.preprocess, splits=[split])
    budget = args.budget if args.budget is not None else cfg.eval.pair_budget
    scores = score_pairs(model, bank, split, sys.maxsize if budget is None else budget,
                         np.random.default_rng(cfg.eval.seed), _train_clients_for(checkpoint))
    report = evaluate(scores, step=cfg.eval.sweep_step)
    g, i = scores.arrays()
    doc = report.to_dict()
    doc.update({
        "split": split,
        "checkpoint": str(checkpoint),
        "mean_distance_genuine": float(np.mean(1.0 - g)),
        "mean_distance_imposter": float(np.mean(1.0 - i)),
    })
    out = Path(args.out)
    atomic_write(out, _dump_json(doc).encode())
    roc = Path(args.roc) if args.roc else out.with_suffix(".roc.csv")
    roc_export(report, roc)
    print(_dump_json({"eer": report.eer, "eer_threshold": report.eer_threshold,
                      "n_genuine": report.n_genuine, "n_imposter": report.n_imposter,
                      "report": str(out), "roc": str(roc)}), end="")
    return EXIT_OK


def _read_raw_clip(path: Path, landmarks, cfg: RunConfig) -> np.ndarray:
    frames = clipio.read_clip(path)
    lm_path = Path(landmarks) if landmarks else path.with_name(path.name[:-len(path.suffix)] + ".landmarks.csv")
    return preprocess_clip(frames, clipio.read_landmarks(lm_path), cfg.preprocess).frames


def _load_clip(args, cfg: RunConfig, model) -> np.ndarray:
    """A network-ready clip as-is, or a raw clip preprocessed with its landmarks."""
    path = Path(args.clip)
    frames = clipio.read_clip(path)
    expected = (model.config.clip_length, *model.config.input_shape)
    if tuple(frames.shape) == expected and not args.landmarks:
        return frames
    return _read_raw_clip(path, args.landmarks, cfg)


def _now_ns() -> int:
    """Enrollment time; honours SOURCE_DATE_EPOCH for reproducible stores."""
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    if epoch is not None:
        return int(epoch) * 1_000_000_000
    import time
    return time.time_ns()


def cmd_enroll(args) -> int:
    cfg = _config(args)
    model = load_model(args.checkpoint)
    store = authstore.open_store(args.store)
    rec = authstore.enroll(store, args.client, args.phrase, _load_clip(args, cfg, model), model,
                           now_ns=_now_ns())
    authstore.save_store(store, args.store)
    print(_dump_json({"client": rec.client_id, "phrase": rec.phrase_id,
                      "enrolled_at": rec.enrolled_at, "records": len(store)}), end="")
    return EXIT_OK


def cmd_verify(args) -> int:
    cfg = _config(args)
    model = load_model(args.checkpoint)
    store = authstore.load_store(args.store)
    decision = authstore.authenticate(store, args.client, args.phrase, _load_clip(args, cfg, model),
                                      model, args.threshold)
    print(json.dumps(decision.to_dict(), sort_keys=True))
    return EXIT_OK


# -- parser -----------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lipauth", description="Lip-motion speaker authentication toolkit.",
        epilog="exit codes: 0 ok, 1 error, 2 usage/config, 3 I/O, 4 non-finite loss, "
               "5 protocol violation, 6 not enrolled, 7 conflict, 8 model mismatch")
    parser.add_argument("--version", action="version", version=f"lipauth {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", help="run configuration JSON (defaults if omitted)")
        p.set_defaults(func=func)
        return p

    p = add("gen-corpus", cmd_gen_corpus, "render the synthetic corpus")
    p.add_argument("--out", required=True, help="corpus directory")

    p = add("preprocess", cmd_preprocess, "crop and resample a corpus (or one clip)")
    p.add_argument("--corpus", help="raw corpus directory")
    p.add_argument("--clip", help="single raw clip instead of a corpus")
    p.add_argument("--landmarks", help="landmark CSV for --clip (default: sibling file)")
    p.add_argument("--out", required=True, help="output directory (or clip file with --clip)")

    p = add("train", cmd_train, "train the embedding network")
    p.add_argument("--corpus", help="corpus directory (raw or preprocessed)")
    p.add_argument("--out", help="run directory for checkpoints and history")
    p.add_argument("--max-iterations", type=int, help="override train.max_iterations")
    p.add_argument("--seed", type=int, help="override train.seed")

    p = add("eval", cmd_eval, "score an evaluation split and compute FAR/FRR/EER")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--corpus", help="corpus directory (raw or preprocessed)")
    p.add_argument("--split", choices=["train", "val", "test"], help="default: eval.split (test)")
    p.add_argument("--budget", type=int, help="triplets to score (default: all)")
    p.add_argument("--out", required=True, help="report JSON path")
    p.add_argument("--roc", help="ROC CSV path (default: <out>.roc.csv)")

    for name, func, help_ in (("enroll", cmd_enroll, "enroll a client's pass-phrase"),
                              ("verify", cmd_verify, "authenticate a pass-phrase attempt")):
        p = add(name, func, help_)
        p.add_argument("--store", required=True)
        p.add_argument("--client", required=True)
        p.add_argument("--phrase", required=True)
        p.add_argument("--clip", required=True,
                       help="preprocessed clip, or raw clip with a landmark CSV")
        p.add_argument("--landmarks", help="landmark CSV for a raw clip (default: sibling file)")
        p.add_argument("--checkpoint", required=True)
        if name == "verify":
            p.add_argument("--threshold", type=float, required=True)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (LipAuthError, OSError) as exc:
        code = exit_code_for(exc)
        print(f"lipauth {args.command}: error: {exc}", file=sys.stderr)
        return code


if __name__ == "__main__":
    sys.exit(main())
