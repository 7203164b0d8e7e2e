"""Command line entry point: gen | train | embed | retrieve | probe | stats.

Exit codes: 0 success, 2 usage, 3 data error, 4 I/O error.
"""

from __future__ import annotations

import argparse
import contextlib
import json
import logging
import os
import sys
from collections import Counter
from pathlib import Path

import numpy as np

from .autodiff import CheckpointError
from .config import RunConfig
from .data import DataError, gen_synthetic_corpus, hash_split, load_corpus, read_index, save_corpus
from .data.synthetic import class_name
from .nn import ParameterMismatchError
from .probe import DegenerateDataError, linear_probe

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_IO = 0, 2, 3, 4
FRAME_CHOICES = (1, 4, 8, 16, 32, 64)
LENGTH_BUCKETS = (0, 20, 40, 60, 80, 100)

log = logging.getLogger("stalign")


class UsageError(Exception):
    pass


def _threads() -> int:
    raw = os.environ.get("STALIGN_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise UsageError(f"STALIGN_THREADS must be an integer, got {raw!r}") from None
    if n < 1:
        raise UsageError("STALIGN_THREADS must be >= 1")
    return n


@contextlib.contextmanager
def out_lock(path: Path):
    """Exclusive lock file guarding an output directory."""
    path.mkdir(parents=True, exist_ok=True)
    lock = path / ".lock"
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise OSError(f"{path} is locked by another run (remove {lock} if stale)") from None
    try:
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        yield
    finally:
        lock.unlink(missing_ok=True)


def _emit(obj) -> None:
    print(json.dumps(obj, sort_keys=True))


# -- subcommands --------------------------------------------------------------
def cmd_gen(args) -> int:
    if args.n < 2 or args.classes < 2:
        raise UsageError("--n and --classes must both be at least 2")
    corpus = gen_synthetic_corpus(args.n, args.classes, args.seed)
    out = Path(args.out)
    with out_lock(out):
        save_corpus(corpus, out)
    counts = Counter(s.labels["class"] for s in corpus)
    _emit({"studies": len(corpus),
           "classes": {class_name(c): counts[c] for c in sorted(counts)}})
    return EXIT_OK


def cmd_train(args) -> int:
    from .train import train

    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    overrides = {k: v for k, v in (("corpus", args.corpus), ("seed", args.seed),
                                   ("epochs", args.epochs), ("frames", args.frames)) if v is not None}
    for k, v in overrides.items():
        setattr(cfg, k, v)
    try:
        cfg.validate()
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    if not cfg.corpus:
        raise UsageError("no corpus given (--corpus or 'corpus =' in the config)")
    corpus = load_corpus(cfg.corpus)
    out = Path(args.out)
    with out_lock(out):
        result = train(cfg, corpus, out)
    for sid, missing in result.excluded:
        _emit({"excluded": sid, "missing": [f"{t}_{v}" for t, v in missing]})
    _emit({"final": result.epochs[-1] if result.epochs else None,
           "train_studies": len(result.train_ids), "test_studies": len(result.test_ids)})
    return EXIT_OK


def cmd_embed(args) -> int:
    from .data.manifest import ViewSpec
    from .model import load_model
    from .retrieval import embed_corpus, save_embeddings

    if args.frames not in FRAME_CHOICES:
        raise UsageError(f"--frames must be one of {FRAME_CHOICES}")
    model, vocab = load_model(args.checkpoint)
    corpus = load_corpus(args.corpus)
    if args.split != "all":
        train_ids, test_ids = hash_split([s.study_id for s in corpus], model.config.train_fraction)
        keep = set(test_ids if args.split == "test" else train_ids)
        corpus = [s for s in corpus if s.study_id in keep]
    spec = ViewSpec.parse(args.view_spec) if args.view_spec else None
    index = embed_corpus(corpus, model, vocab, spec=spec, frames=args.frames, stride=args.stride)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_embeddings(index, out)
    _emit({"videos": len(index.video_ids), "texts": len(index.text_ids),
           "forward_passes": model.forward_passes})
    return EXIT_OK


def cmd_retrieve(args) -> int:
    from .retrieval import evaluate_retrieval, load_embeddings

    index = load_embeddings(args.embeds)
    index.validate()
    report = evaluate_retrieval(index).percent()
    _write_report(args.out, report)
    return EXIT_OK


def cmd_probe(args) -> int:
    from .retrieval import load_embeddings

    index = load_embeddings(args.embeds)
    labels = {rec["study_id"]: rec["labels"] for rec in read_index(args.labels)}
    ids = [s for s in index.video_ids if s in labels]
    if not ids:
        raise DataError("no embedded study has labels")
    names = args.label or sorted({k for s in ids for k in labels[s]})
    rows = {s: i for i, s in enumerate(index.video_ids)}
    train_ids, test_ids = hash_split(ids, args.train_fraction)
    X = index.video
    results = {}
    for name in names:
        try:
            y_train = [labels[s][name] for s in train_ids]
            y_test = [labels[s][name] for s in test_ids]
        except KeyError as exc:
            raise DataError(f"label {name!r} missing for study {exc}") from exc
        metrics = linear_probe(X[[rows[s] for s in train_ids]], y_train,
                               X[[rows[s] for s in test_ids]], y_test)
        results[name] = metrics.as_dict()
    _write_report(args.out, {"probe": results})
    return EXIT_OK


def cmd_stats(args) -> int:
    corpus = load_corpus(args.corpus)
    lengths = [len(s.impression.split()) for s in corpus]
    edges = list(LENGTH_BUCKETS) + [np.inf]
    hist = {}
    for lo, hi in zip(edges[:-1], edges[1:]):
        label = f"{lo}-{hi - 1}" if np.isfinite(hi) else f"{lo}+"
        hist[label] = sum(lo <= n < hi for n in lengths)
    series = Counter(f"{se.image_type}_{se.view}" for s in corpus for se in s.series)
    frames = Counter(f"{se.image_type}_{se.view}:{se.frames.shape[0]}" for s in corpus for se in s.series)
    classes = Counter(s.labels.get("class") for s in corpus if "class" in s.labels)
    _emit({
        "studies": len(corpus),
        "impression_words": {"histogram": hist,
                             "mean": float(np.mean(lengths)) if lengths else 0.0,
                             "max": max(lengths, default=0)},
        "series": dict(sorted(series.items())),
        "frames_per_series": dict(sorted(frames.items())),
        "classes": {class_name(c): n for c, n in sorted(classes.items())},
    })
    return EXIT_OK


def _write_report(out: str | None, report: dict) -> None:
    text = json.dumps(report, sort_keys=True)
    if out:
        Path(out).write_text(text + "\n", encoding="utf-8")
    print(text)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="stalign", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic corpus")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--classes", type=int, default=4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("train", help="contrastive training")
    p.add_argument("--config")
    p.add_argument("--corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--frames", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("embed", help="embed a corpus with a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--frames", type=int, default=4)
    p.add_argument("--stride", type=int, default=1)
    p.add_argument("--view-spec")
    p.add_argument("--split", choices=("all", "train", "test"), default="all")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("retrieve", help="R@K / RSUM from an embedding dump")
    p.add_argument("--embeds", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_retrieve)

    p = sub.add_parser("probe", help="linear probe on frozen video embeddings")
    p.add_argument("--embeds", required=True)
    p.add_argument("--labels", required=True, help="corpus directory or JSON-lines with study_id/labels")
    p.add_argument("--label", action="append", help="label key to probe (repeatable; default all)")
    p.add_argument("--train-fraction", type=float, default=0.7)
    p.add_argument("--out")
    p.set_defaults(func=cmd_probe)

    p = sub.add_parser("stats", help="corpus statistics")
    p.add_argument("--corpus", required=True)
    p.set_defaults(func=cmd_stats)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        from threadpoolctl import threadpool_limits

        with threadpool_limits(_threads()):
            return args.func(args)
    except UsageError as exc:
        print(f"stalign {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, DegenerateDataError, CheckpointError, ParameterMismatchError, ValueError) as exc:
        print(f"stalign {args.command}: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"stalign {args.command}: {exc}", file=sys.stderr)
        return EXIT_IO


def main_entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    main_entry()
