"""Contrastive training of the dual encoder on study/impression pairs."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .alignment import AlignmentBatch, contrastive_loss, duplicate_texts
from .autodiff import AdamState, adam_step
from .config import RunConfig
from .data.assembly import ExclusionError, assemble_video
from .data.manifest import DataError, StudyManifest
from .data.sampling import SamplingPlan, tsn_sample
from .data.split import hash_split
from .model import DualEncoder, RunArtifacts
from .retrieval import embed_corpus, evaluate_retrieval
from .text import Vocabulary, tokenize

log = logging.getLogger(__name__)


@dataclass
class TrainResult:
    model: DualEncoder
    vocab: Vocabulary
    train_ids: list[str]
    test_ids: list[str]
    excluded: list[tuple[str, list[tuple[str, str]]]]
    epochs: list[dict] = field(default_factory=list)
    steps: list[dict] = field(default_factory=list)


def partition(corpus: Sequence[StudyManifest], cfg: RunConfig):
    """Drop studies lacking a required (type, view); split the rest by id hash."""
    spec = cfg.views()
    kept, excluded = [], []
    for s in corpus:
        missing = spec.missing(s)
        if missing:
            excluded.append((s.study_id, missing))
        else:
            kept.append(s)
    for sid, missing in excluded:
        log.warning("%s", ExclusionError(sid, missing))
    if not kept:
        raise DataError(f"every study lacks part of view spec {spec}; nothing to train on")
    train_ids, test_ids = hash_split([s.study_id for s in kept], cfg.train_fraction)
    by_id = {s.study_id: s for s in kept}
    return [by_id[i] for i in train_ids], [by_id[i] for i in test_ids], excluded


def train(cfg: RunConfig, corpus: Sequence[StudyManifest], out_dir: str | Path | None = None) -> TrainResult:
    cfg.validate()
    train_set, test_set, excluded = partition(corpus, cfg)
    if len(train_set) < 2:
        raise DataError("need at least two training studies for a contrastive batch")
    vocab = Vocabulary.build((s.impression for s in train_set), cfg.min_freq)
    model = DualEncoder(cfg, len(vocab))
    result = TrainResult(model, vocab, [s.study_id for s in train_set],
                         [s.study_id for s in test_set], excluded)

    run = None
    if out_dir is not None:
        run = RunArtifacts(out_dir)
        run.root.mkdir(parents=True, exist_ok=True)
        cfg.save(run.config)
        vocab.save(run.vocab)
        model.save(run.init)
        for p in (run.metrics, run.steps):
            p.write_text("", encoding="utf-8")

    spec = cfg.views()
    videos = [assemble_video(s, spec, cfg.height, cfg.width) for s in train_set]
    toks = [tokenize(s.impression, vocab, cfg.max_len) for s in train_set]
    texts = [s.impression for s in train_set]
    state = AdamState(lr=cfg.lr)
    params = model.parameters()
    best = -math.inf
    step = 0

    for epoch in range(cfg.epochs):
        rng = np.random.default_rng([cfg.seed, epoch])
        order = rng.permutation(len(train_set))
        sums = np.zeros(3)
        n_batches = 0
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start: start + cfg.batch_size]
            if len(idx) < 2:
                continue
            clip_seeds = rng.integers(0, 2**31, size=len(idx))
            clips = np.stack([
                videos[i][tsn_sample(SamplingPlan(len(videos[i]), cfg.frames), int(s))]
                for i, s in zip(idx, clip_seeds)
            ])
            dups = duplicate_texts([texts[i] for i in idx])
            if dups:
                log.warning("batch at step %d has %d duplicated impressions (kept as negatives)", step, len(dups))

            model.zero_grad()
            x = model.embed_video(clips)
            y = model.embed_text([toks[i] for i in idx])
            losses = contrastive_loss(AlignmentBatch(x, y, model.temperature))
            values = losses.floats()
            if not all(math.isfinite(v) for v in values.values()):
                raise FloatingPointError(f"non-finite loss at step {step}: {values}")
            losses.total.backward()
            adam_step(params, None, state)
            if cfg.learn_sigma:
                model.sigma.data = np.maximum(model.sigma.data, 1e-3).astype(model.sigma.dtype)

            record = {"step": step, **values, "sigma": float(model.temperature.data)}
            result.steps.append(record)
            if run is not None:
                with open(run.steps, "a", encoding="utf-8") as fh:
                    fh.write(json.dumps(record) + "\n")
            sums += [values["l_v2t"], values["l_t2v"], values["total"]]
            n_batches += 1
            step += 1

        means = sums / max(n_batches, 1)
        entry = {"epoch": epoch, "l_v2t": means[0], "l_t2v": means[1], "total": means[2]}
        if test_set:
            report = evaluate_retrieval(embed_corpus(test_set, model, vocab))
            entry["val_rsum"] = 100.0 * report.rsum
        result.epochs.append(entry)
        log.info("epoch %d: %s", epoch, entry)
        if run is not None:
            with open(run.metrics, "a", encoding="utf-8") as fh:
                fh.write(json.dumps(entry) + "\n")
            score = entry.get("val_rsum", -entry["total"])
            if score > best:
                best = score
                model.save(run.best)

    if run is not None:
        model.save(run.final)
    return result
