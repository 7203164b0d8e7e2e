"""On-disk corpus: a JSON-lines index plus one binary frame file per series.

Layout of a corpus directory::

    corpus.jsonl        first line {"format": "stalign-corpus", "version": 1}
                        then one study per line:
                        {"study_id", "impression", "labels",
                         "series": [{"image_type", "view", "frames_file",
                                     "frame_count", "h", "w"}, ...]}
    frames/*.stfr       b"STFR", u32 count, u32 h, u32 w, then count*h*w
                        little-endian f32 values in row-major (frame, row, col)
"""

from __future__ import annotations

import json
import os
import re
import struct
from pathlib import Path

import numpy as np

from .manifest import DataError, Series, StudyManifest

FORMAT = "stalign-corpus"
VERSION = 1
FRAME_MAGIC = b"STFR"
INDEX_NAME = "corpus.jsonl"


class CorpusFormatError(DataError):
    pass


def _safe(name: str) -> str:
    return re.sub(r"[^A-Za-z0-9._-]", "_", name)


def write_frames(path: Path, frames: np.ndarray) -> None:
    frames = np.ascontiguousarray(frames, dtype="<f4")
    count, h, w = frames.shape
    with open(path, "wb") as fh:
        fh.write(FRAME_MAGIC + struct.pack("<III", count, h, w) + frames.tobytes())


def read_frames(path: Path) -> np.ndarray:
    try:
        buf = Path(path).read_bytes()
    except OSError as exc:
        raise CorpusFormatError(f"{path}: cannot read frame file ({exc})") from exc
    if buf[:4] != FRAME_MAGIC:
        raise CorpusFormatError(f"{path}: bad frame-file magic at offset 0")
    if len(buf) < 16:
        raise CorpusFormatError(f"{path}: truncated header at offset {len(buf)}")
    count, h, w = struct.unpack_from("<III", buf, 4)
    need = 16 + 4 * count * h * w
    if len(buf) != need:
        raise CorpusFormatError(f"{path}: expected {need} bytes, found {len(buf)} (offset {len(buf)})")
    return np.frombuffer(buf, dtype="<f4", offset=16).reshape(count, h, w).astype(np.float32)


def save_corpus(corpus: list[StudyManifest], path: str | os.PathLike) -> Path:
    root = Path(path)
    frames_dir = root / "frames"
    frames_dir.mkdir(parents=True, exist_ok=True)
    ids = [s.study_id for s in corpus]
    if len(set(ids)) != len(ids):
        raise DataError("study ids must be unique within a corpus")
    lines = [json.dumps({"format": FORMAT, "version": VERSION})]
    for study in corpus:
        entries = []
        for s in study.series:
            fname = f"{_safe(study.study_id)}__{s.image_type}_{s.view}.stfr"
            write_frames(frames_dir / fname, s.frames)
            count, h, w = s.frames.shape
            entries.append({"image_type": s.image_type, "view": s.view,
                            "frames_file": f"frames/{fname}", "frame_count": count, "h": h, "w": w})
        lines.append(json.dumps({"study_id": study.study_id, "impression": study.impression,
                                 "labels": study.labels, "series": entries}, sort_keys=True))
    tmp = root / (INDEX_NAME + ".tmp")
    tmp.write_text("\n".join(lines) + "\n", encoding="utf-8")
    os.replace(tmp, root / INDEX_NAME)
    return root


def _index_path(path: str | os.PathLike) -> Path:
    p = Path(path)
    return p / INDEX_NAME if p.is_dir() else p


def read_index(path: str | os.PathLike) -> list[dict]:
    """Parse and validate the JSON-lines index without touching frame files."""
    index = _index_path(path)
    try:
        text = index.read_text(encoding="utf-8")
    except OSError as exc:
        raise CorpusFormatError(f"{index}: cannot read corpus index ({exc})") from exc
    lines = text.split("\n")
    if not text.endswith("\n"):
        raise CorpusFormatError(f"{index}: truncated (no trailing newline) at line {len(lines)}")
    lines = lines[:-1]
    if not lines:
        raise CorpusFormatError(f"{index}: empty file, missing header at line 1")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise CorpusFormatError(f"{index}: line 1, offset {exc.pos}: {exc.msg}") from exc
    if header.get("format") != FORMAT:
        raise CorpusFormatError(f"{index}: line 1: not a {FORMAT} file")
    if header.get("version") != VERSION:
        raise CorpusFormatError(f"{index}: unsupported corpus version {header.get('version')}")
    records = []
    for lineno, line in enumerate(lines[1:], start=2):
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise CorpusFormatError(f"{index}: line {lineno}, offset {exc.pos}: {exc.msg}") from exc
        for key in ("study_id", "impression", "labels", "series"):
            if key not in rec:
                raise CorpusFormatError(f"{index}: line {lineno}: missing field {key!r}")
        records.append(rec)
    return records


def load_corpus(path: str | os.PathLike) -> list[StudyManifest]:
    index = _index_path(path)
    records = read_index(index)
    root = index.parent
    corpus = []
    seen = set()
    for rec in records:
        if rec["study_id"] in seen:
            raise CorpusFormatError(f"{index}: duplicate study id {rec['study_id']!r}")
        seen.add(rec["study_id"])
        series = []
        for entry in rec["series"]:
            frames = read_frames(root / entry["frames_file"])
            if frames.shape != (entry["frame_count"], entry["h"], entry["w"]):
                raise CorpusFormatError(
                    f"{entry['frames_file']}: shape {frames.shape} disagrees with index entry")
            series.append(Series(entry["image_type"], entry["view"], frames))
        corpus.append(StudyManifest(rec["study_id"], series, rec["impression"],
                                    {k: int(v) for k, v in rec["labels"].items()}))
    return corpus
