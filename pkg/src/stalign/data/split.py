"""Reproducible train/test splits keyed on study ids."""

from __future__ import annotations

import hashlib
from typing import Sequence


def hash_split(study_ids: Sequence[str], train_fraction: float = 0.8) -> tuple[list[str], list[str]]:
    """Order ids by SHA-256 and cut at ``round(train_fraction * n)``; result lists keep input order."""
    ranked = sorted(study_ids, key=lambda s: hashlib.sha256(s.encode("utf-8")).hexdigest())
    n_train = int(round(train_fraction * len(ranked)))
    train = set(ranked[:n_train])
    return [s for s in study_ids if s in train], [s for s in study_ids if s not in train]
