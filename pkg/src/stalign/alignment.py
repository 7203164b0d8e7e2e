"""Shared-space projection, dot-product similarity and the bidirectional contrastive loss."""

from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import DiffTensor
from .nn import Linear, Module

log = logging.getLogger(__name__)

NORM_EPS = 1e-12


class Projection(Module):
    def __init__(self, rng: np.random.Generator, d_in: int, d_out: int, dtype=np.float32):
        self.linear = Linear(rng, d_in, d_out, std=d_in**-0.5, dtype=dtype)

    def __call__(self, raw: DiffTensor) -> DiffTensor:
        return project_and_normalize(raw, self)


def project_and_normalize(raw: DiffTensor, proj: Projection) -> DiffTensor:
    z = proj.linear(raw)
    norms = np.linalg.norm(z.data, axis=-1)
    if np.any(norms < 1e-8):
        log.warning("projected embedding with near-zero norm (%d rows); eps-regularised",
                    int(np.sum(norms < 1e-8)))
    return ad.l2_normalize(z, axis=-1, eps=NORM_EPS)


@dataclass
class AlignmentBatch:
    video: DiffTensor  # (B, dp) unit rows
    text: DiffTensor  # (B, dp) unit rows; row i pairs with video row i
    sigma: float | DiffTensor = 0.05

    def __post_init__(self):
        if not isinstance(self.video, DiffTensor):
            self.video = DiffTensor(self.video)
        if not isinstance(self.text, DiffTensor):
            self.text = DiffTensor(self.text)

    @property
    def size(self) -> int:
        return self.video.shape[0]

    def validate(self, tol: float = 1e-5) -> None:
        if self.video.shape != self.text.shape or self.video.ndim != 2:
            raise ValueError(f"paired embeddings must share a (B, d) shape: "
                             f"{self.video.shape} vs {self.text.shape}")
        sigma = float(np.asarray(getattr(self.sigma, "data", self.sigma)))
        if not sigma > 0:
            raise ValueError(f"temperature must be positive, got {sigma}")
        for name, t in (("video", self.video), ("text", self.text)):
            n = np.linalg.norm(t.data.astype(np.float64), axis=1)
            if np.max(np.abs(n - 1.0)) > tol:
                raise ValueError(f"{name} rows are not unit norm (max deviation {np.max(np.abs(n - 1.0)):.2e})")


@dataclass
class LossBreakdown:
    l_v2t: DiffTensor
    l_t2v: DiffTensor
    total: DiffTensor

    def floats(self) -> dict[str, float]:
        return {"l_v2t": self.l_v2t.item(), "l_t2v": self.l_t2v.item(), "total": self.total.item()}


def similarity_matrix(batch: AlignmentBatch) -> DiffTensor:
    """``S[i, j] = x_i . y_j``."""
    return ad.matmul(batch.video, ad.swapaxes(batch.text, 0, 1))


def contrastive_loss(batch: AlignmentBatch) -> LossBreakdown:
    """Video-to-text plus text-to-video cross-entropy over in-batch similarities."""
    B = batch.size
    if B < 2:
        raise ValueError(f"contrastive loss needs at least 2 pairs, got {B}")
    if batch.video.shape != batch.text.shape:
        raise ValueError(f"paired shapes differ: {batch.video.shape} vs {batch.text.shape}")
    sigma = batch.sigma
    if not isinstance(sigma, DiffTensor) and not sigma > 0:
        raise ValueError(f"temperature must be positive, got {sigma}")
    logits = similarity_matrix(batch) / sigma
    eye = np.eye(B, dtype=logits.dtype)
    # row i: video i against all texts; column i: text i against all videos
    l_v2t = ad.sum(ad.log_softmax(logits, axis=1) * eye) * (-1.0 / B)
    l_t2v = ad.sum(ad.log_softmax(logits, axis=0) * eye) * (-1.0 / B)
    return LossBreakdown(l_v2t, l_t2v, l_v2t + l_t2v)


def duplicate_texts(texts: Sequence[str]) -> list[str]:
    """Impressions that occur more than once; they still act as negatives."""
    return sorted(t for t, c in Counter(texts).items() if c > 1)
