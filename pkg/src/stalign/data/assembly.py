"""Build a single 3-channel clip from a study's series."""

from __future__ import annotations

import numpy as np
from scipy import ndimage

from .manifest import DataError, StudyManifest, ViewSpec


class ExclusionError(DataError):
    """Study lacks a (type, view) required by the view spec."""

    def __init__(self, study_id: str, missing: list[tuple[str, str]]):
        self.study_id = study_id
        self.missing = missing
        names = ", ".join(f"{t}_{v}" for t, v in missing)
        super().__init__(f"study {study_id} excluded: missing {names}")


def _resize(frames: np.ndarray, height: int, width: int) -> np.ndarray:
    F, H, W = frames.shape
    if (H, W) == (height, width):
        return frames
    return ndimage.zoom(frames, (1, height / H, width / W), order=1).astype(np.float32)


def assembled_length(study: StudyManifest, spec: ViewSpec) -> int:
    lge_depth = _lge_depth(study)
    total = 0
    for t, v in spec.pairs:
        s = study.get(t, v)
        if s is None:
            raise ExclusionError(study.study_id, spec.missing(study))
        n = s.frames.shape[0]
        total += lge_depth if (t == "LGE" and v != "sax" and n == 1) else n
    return total


def _lge_depth(study: StudyManifest) -> int:
    sax = study.get("LGE", "sax")
    return sax.frames.shape[0] if sax is not None else 1


def assemble_video(study: StudyManifest, spec: ViewSpec, height: int = 32, width: int = 32) -> np.ndarray:
    """Concatenate series into an ``(L, 3, H, W)`` clip.

    CINE series run along time and come first, then LGE series, each group in
    spec order. Single-image LGE views are repeated to the LGE sax depth.
    Pixels are min-max scaled to [0, 1] over the whole clip, then mean-centred.
    """
    missing = spec.missing(study)
    if missing:
        raise ExclusionError(study.study_id, missing)
    depth = _lge_depth(study)
    chunks = []
    for group in ("CINE", "LGE"):
        for t, v in spec.pairs:
            if t != group:
                continue
            frames = study.get(t, v).frames
            if frames.shape[0] == 0:
                raise DataError(f"study {study.study_id}: empty {t}_{v} series")
            if t == "LGE" and v != "sax" and frames.shape[0] == 1:
                frames = np.repeat(frames, depth, axis=0)
            chunks.append(_resize(frames, height, width))
    clip = np.concatenate(chunks, axis=0).astype(np.float64)
    lo, hi = clip.min(), clip.max()
    clip = (clip - lo) / (hi - lo) if hi > lo else np.zeros_like(clip)
    clip -= clip.mean()
    return np.repeat(clip[:, None, :, :], 3, axis=1).astype(np.float32)
