"""Corpus embedding and bidirectional recall@K evaluation."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from . import autodiff as ad
from .data.assembly import assemble_video
from .data.manifest import StudyManifest, ViewSpec
from .data.sampling import SamplingPlan, inference_plan
from .model import DualEncoder
from .text import Vocabulary, tokenize

DIRECTIONS = ("t2v", "v2t")
REPORT_KS = (5, 10, 50)


@dataclass
class CorpusIndex:
    video_ids: list[str]
    video: np.ndarray  # (v, dp) float32 unit rows
    text_ids: list[str]
    text: np.ndarray  # (t, dp) float32 unit rows

    def validate(self, tol: float = 1e-5) -> None:
        for name, ids, emb in (("video", self.video_ids, self.video), ("text", self.text_ids, self.text)):
            if len(set(ids)) != len(ids):
                raise ValueError(f"duplicate {name} study ids in index")
            if emb.shape[0] != len(ids):
                raise ValueError(f"{name}: {emb.shape[0]} rows for {len(ids)} ids")
            if len(ids):
                dev = np.abs(np.linalg.norm(emb.astype(np.float64), axis=1) - 1.0).max()
                if dev > tol:
                    raise ValueError(f"{name} rows are not unit norm (max deviation {dev:.2e})")

    def subset(self, ids: Sequence[str]) -> CorpusIndex:
        keep = set(ids)
        vi = [i for i, s in enumerate(self.video_ids) if s in keep]
        ti = [i for i, s in enumerate(self.text_ids) if s in keep]
        return CorpusIndex([self.video_ids[i] for i in vi], self.video[vi],
                           [self.text_ids[i] for i in ti], self.text[ti])


def study_clips(video: np.ndarray, frames: int, stride: int) -> np.ndarray:
    """(n_offsets, M, 3, H, W) clips for strided inference over an assembled video."""
    plan = SamplingPlan(video.shape[0], frames, stride, mode="inference")
    return np.stack([video[idx] for idx in inference_plan(plan)])


def embed_corpus(
    corpus: Sequence[StudyManifest],
    model: DualEncoder,
    vocab: Vocabulary,
    *,
    spec: ViewSpec | None = None,
    frames: int | None = None,
    stride: int | None = None,
    batch_size: int = 32,
) -> CorpusIndex:
    """Encode every study's video and impression independently.

    Each video embedding is the mean of its per-offset clip embeddings,
    renormalised (a single clip is taken as is).
    """
    if not corpus:
        raise ValueError("cannot embed an empty corpus")
    cfg = model.config
    spec = spec or cfg.views()
    frames = frames or cfg.frames
    stride = stride or cfg.stride
    before = model.forward_passes

    clip_sets = [study_clips(assemble_video(s, spec, cfg.height, cfg.width), frames, stride) for s in corpus]
    owners = np.concatenate([np.full(len(c), i) for i, c in enumerate(clip_sets)])
    all_clips = np.concatenate(clip_sets)
    toks = [tokenize(s.impression, vocab, cfg.max_len) for s in corpus]

    with ad.no_grad():
        clip_emb = np.concatenate([model.embed_video(all_clips[i: i + batch_size]).data
                                   for i in range(0, len(all_clips), batch_size)])
        text_emb = np.concatenate([model.embed_text(toks[i: i + batch_size]).data
                                   for i in range(0, len(toks), batch_size)])

    video = np.empty((len(corpus), clip_emb.shape[1]), dtype=np.float32)
    for i in range(len(corpus)):
        members = clip_emb[owners == i]
        if len(members) == 1:
            video[i] = members[0]
        else:
            m = members.astype(np.float64).mean(axis=0)
            video[i] = (m / (np.linalg.norm(m) + 1e-12)).astype(np.float32)

    after = model.forward_passes
    n_video, n_text = after["video"] - before["video"], after["text"] - before["text"]
    # dual-encoder contract: t + v * offsets passes, never t * v
    if n_text != len(corpus) or n_video != len(all_clips):
        raise RuntimeError(f"expected {len(corpus)} text and {len(all_clips)} video passes, "
                           f"ran {n_text} and {n_video}")

    ids = [s.study_id for s in corpus]
    return CorpusIndex(ids, video, list(ids), text_emb.astype(np.float32))


def true_pair_ranks(index: CorpusIndex, direction: str) -> np.ndarray:
    """1-based rank of each query's true counterpart; ties go to the lower gallery position."""
    if direction == "t2v":
        q_ids, Q, g_ids, G = index.text_ids, index.text, index.video_ids, index.video
    elif direction == "v2t":
        q_ids, Q, g_ids, G = index.video_ids, index.video, index.text_ids, index.text
    else:
        raise ValueError(f"direction must be one of {DIRECTIONS}, got {direction!r}")
    if not g_ids:
        raise ValueError("empty gallery")
    where = {sid: i for i, sid in enumerate(g_ids)}
    try:
        pos = np.array([where[sid] for sid in q_ids], dtype=np.int64)
    except KeyError as exc:
        raise ValueError(f"query {exc.args[0]!r} has no counterpart in the gallery") from exc
    scores = Q.astype(np.float64) @ G.astype(np.float64).T
    s_true = scores[np.arange(len(q_ids)), pos][:, None]
    better = (scores > s_true).sum(axis=1)
    tied_before = ((scores == s_true) & (np.arange(len(g_ids))[None, :] < pos[:, None])).sum(axis=1)
    return better + tied_before + 1


def recall_at_k(index: CorpusIndex, direction: str, k: int) -> float:
    if k < 1:
        raise ValueError("K must be >= 1")
    ranks = true_pair_ranks(index, direction)
    return float(np.mean(ranks <= k))


def rsum(recalls: Mapping[str, Mapping[int, float]]) -> float:
    """Sum of R@5, R@10, R@50 over both directions."""
    total = 0.0
    for d in DIRECTIONS:
        if d not in recalls:
            raise ValueError(f"missing direction {d!r}")
        for k in REPORT_KS:
            if k not in recalls[d]:
                raise ValueError(f"missing R@{k} for {d}")
            total += recalls[d][k]
    return total


@dataclass
class RetrievalReport:
    recalls: dict[str, dict[int, float]]  # fractions
    rsum: float  # sum of fractions; x100 for the percentage convention
    gallery_videos: int
    gallery_texts: int

    def percent(self) -> dict:
        return {
            **{d: {f"r{k}": 100.0 * self.recalls[d][k] for k in REPORT_KS} for d in DIRECTIONS},
            "rsum": 100.0 * self.rsum,
        }


def evaluate_retrieval(index: CorpusIndex, ks: Sequence[int] = REPORT_KS) -> RetrievalReport:
    recalls = {d: {} for d in DIRECTIONS}
    for d in DIRECTIONS:
        ranks = true_pair_ranks(index, d)
        for k in ks:
            recalls[d][k] = float(np.mean(ranks <= k))
    return RetrievalReport(recalls, rsum(recalls), len(index.video_ids), len(index.text_ids))


def save_embeddings(index: CorpusIndex, path: str | os.PathLike) -> None:
    lines = []
    for modality, ids, emb in (("video", index.video_ids, index.video), ("text", index.text_ids, index.text)):
        for sid, row in zip(ids, emb):
            lines.append(json.dumps({"study_id": sid, "modality": modality,
                                     "vector": [float(v) for v in row]}))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + ("\n" if lines else ""))


def load_embeddings(path: str | os.PathLike) -> CorpusIndex:
    rows: dict[str, tuple[list[str], list]] = {"video": ([], []), "text": ([], [])}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                ids, vecs = rows[rec["modality"]]
                ids.append(rec["study_id"])
                vecs.append(rec["vector"])
            except (json.JSONDecodeError, KeyError) as exc:
                raise ValueError(f"{path}: line {lineno}: malformed embedding record ({exc})") from exc
    (vid, vv), (tid, tv) = rows["video"], rows["text"]
    dim = len((vv or tv or [[]])[0])
    as_arr = lambda v: np.asarray(v, dtype=np.float32).reshape(len(v), dim)  # noqa: E731
    return CorpusIndex(vid, as_arr(vv), tid, as_arr(tv))
