"""Study manifests: typed/viewed image series plus impression text."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

IMAGE_TYPES = ("CINE", "LGE")
VIEWS = ("lax", "sax", "2ch", "3ch")


class DataError(ValueError):
    """Malformed or incomplete study data."""


@dataclass
class Series:
    image_type: str
    view: str
    frames: np.ndarray  # (F, H, W) float32 grayscale

    def __post_init__(self):
        if self.image_type not in IMAGE_TYPES:
            raise DataError(f"unknown image type {self.image_type!r}")
        if self.view not in VIEWS:
            raise DataError(f"unknown view {self.view!r}")
        self.frames = np.asarray(self.frames, dtype=np.float32)
        if self.frames.ndim != 3 or self.frames.shape[0] == 0:
            raise DataError(f"{self.image_type}/{self.view}: series must be a non-empty (F, H, W) stack")

    @property
    def key(self) -> tuple[str, str]:
        return self.image_type, self.view


@dataclass
class StudyManifest:
    study_id: str
    series: list[Series]
    impression: str
    labels: dict[str, int] = field(default_factory=dict)

    def get(self, image_type: str, view: str) -> Series | None:
        for s in self.series:
            if s.key == (image_type, view):
                return s
        return None

    def __eq__(self, other) -> bool:
        if not isinstance(other, StudyManifest):
            return NotImplemented
        return (
            self.study_id == other.study_id
            and self.impression == other.impression
            and self.labels == other.labels
            and len(self.series) == len(other.series)
            and all(
                a.key == b.key and a.frames.shape == b.frames.shape
                and a.frames.tobytes() == b.frames.tobytes()
                for a, b in zip(self.series, other.series)
            )
        )


@dataclass(frozen=True)
class ViewSpec:
    """Ordered (image_type, view) recipe for assembling a study video."""

    pairs: tuple[tuple[str, str], ...]

    def __post_init__(self):
        if not self.pairs:
            raise ValueError("view spec needs at least one (type, view) pair")
        if len(set(self.pairs)) != len(self.pairs):
            raise ValueError(f"duplicate (type, view) pair in {self.pairs}")
        for t, v in self.pairs:
            if t not in IMAGE_TYPES or v not in VIEWS:
                raise ValueError(f"unknown (type, view) pair ({t}, {v})")

    @classmethod
    def parse(cls, text: str) -> ViewSpec:
        """``"CINE_lax-sax+LGE_lax-sax-2ch-3ch"`` -> ordered pairs."""
        pairs = []
        for part in text.split("+"):
            part = part.strip()
            if "_" not in part:
                raise ValueError(f"bad view spec segment {part!r}; expected TYPE_view-view")
            image_type, views = part.split("_", 1)
            for v in views.split("-"):
                pairs.append((image_type.upper(), v.lower()))
        return cls(tuple(pairs))

    def __str__(self) -> str:
        groups: dict[str, list[str]] = {}
        for t, v in self.pairs:
            groups.setdefault(t, []).append(v)
        return "+".join(f"{t}_{'-'.join(vs)}" for t, vs in groups.items())

    def missing(self, study: StudyManifest) -> list[tuple[str, str]]:
        return [p for p in self.pairs if study.get(*p) is None]


def dicom_to_manifest(*_args, **_kwargs) -> StudyManifest:
    """Placeholder for a DICOM reader that sorts series by type and view."""
    raise NotImplementedError("DICOM ingestion is not part of this package; build manifests directly")
