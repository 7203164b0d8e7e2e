"""Segment-based frame sampling for training and strided multi-clip inference."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class SamplingPlan:
    total_frames: int
    segments: int
    stride: int = 1
    mode: str = "train"

    def __post_init__(self):
        if self.total_frames < 1 or self.segments < 1 or self.stride < 1:
            raise ValueError(f"invalid sampling plan {self}")
        if self.mode not in ("train", "inference"):
            raise ValueError(f"mode must be 'train' or 'inference', got {self.mode!r}")


def segment_bounds(L: int, M: int) -> list[tuple[int, int]]:
    """Half-open ``[floor(iL/M), floor((i+1)L/M))`` for each of the M segments."""
    return [(i * L // M, (i + 1) * L // M) for i in range(M)]


def tsn_sample(plan: SamplingPlan, rng_seed) -> list[int]:
    """One uniformly drawn frame per segment. Empty segments (L < M) reuse a neighbour."""
    if plan.mode != "train":
        raise ValueError("tsn_sample requires a train-mode plan")
    rng = np.random.default_rng(rng_seed)
    L = plan.total_frames
    out = []
    for start, end in segment_bounds(L, plan.segments):
        if end > start:
            out.append(int(rng.integers(start, end)))
        else:
            out.append(min(start, L - 1))
    return out


def inference_plan(plan: SamplingPlan) -> list[list[int]]:
    """Index lists for offsets 0, S, 2S, ... within every segment."""
    if plan.mode != "inference":
        raise ValueError("inference_plan requires an inference-mode plan")
    L = plan.total_frames
    bounds = segment_bounds(L, plan.segments)
    shortest = max(min(end - start for start, end in bounds), 1)
    lists = []
    for k in range(0, shortest, plan.stride):
        idx = []
        for start, end in bounds:
            if end > start:
                idx.append(min(start + k, end - 1))
            else:
                idx.append(min(start, L - 1))
        lists.append(idx)
    return lists
