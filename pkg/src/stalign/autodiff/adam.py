"""Adam with bias correction."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .tensor import DiffTensor, ShapeError


@dataclass
class AdamState:
    lr: float = 3e-5
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    first_moment: dict[str, np.ndarray] = field(default_factory=dict)
    second_moment: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(
    params: Mapping[str, DiffTensor],
    grads: Mapping[str, np.ndarray | None] | None,
    state: AdamState,
) -> AdamState:
    """Update ``params`` in place and advance ``state`` by one step.

    ``grads`` defaults to each parameter's ``.grad``; a missing gradient is
    treated as zero so the moment estimates stay consistent.
    """
    if state.step_count < 0:
        raise ValueError("step_count must be non-negative")
    t = state.step_count + 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    for name, p in params.items():
        g = p.grad if grads is None else grads.get(name)
        if g is None:
            g = np.zeros_like(p.data)
        if g.shape != p.shape:
            raise ShapeError(f"gradient for {name!r} has shape {g.shape}, parameter has {p.shape}")
        m = state.first_moment.get(name)
        v = state.second_moment.get(name)
        if m is None:
            m = np.zeros_like(p.data)
            v = np.zeros_like(p.data)
        elif m.shape != p.shape:
            raise ShapeError(f"moment for {name!r} has shape {m.shape}, parameter has {p.shape}")
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * (g * g)
        update = state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        p.data = (p.data - update).astype(p.dtype, copy=False)
        state.first_moment[name] = m.astype(p.dtype, copy=False)
        state.second_moment[name] = v.astype(p.dtype, copy=False)
    state.step_count = t
    return state
