"""Seeded synthetic study corpus with a known latent alignment between video and text.

Each study draws a class, a severity and a motion amplitude. The class fixes
the axis along which a blob oscillates through the CINE frames (the blob is
stretched along that axis) and the location of a bright static patch in LGE
frames. Severity fixes blob and patch size, and amplitude fixes how far the
blob travels. The trajectory centre is jittered per series, so blob position
alone is a weak cue. The impression names the same latents through class
keywords, a severity adjective and a wall-motion word, mixed with distractor
sentences that carry no signal.
"""

from __future__ import annotations

import numpy as np

from .manifest import Series, StudyManifest

CLASS_NAMES = ("NICM", "ICM", "AMYL", "HCM", "MYO", "SARC", "LVNC", "TTC")
CLASS_KEYWORDS = (
    ("dilated", "nonischemic"),
    ("infarct", "ischemic"),
    ("amyloid", "infiltrative"),
    ("hypertrophic", "asymmetric"),
    ("myocarditis", "inflammatory"),
    ("sarcoid", "granulomatous"),
    ("noncompaction", "trabeculated"),
    ("takotsubo", "ballooning"),
)
SEVERITY_WORDS = ("mild", "moderate", "severe")
MOTION_WORDS = ("hypodynamic", "hyperdynamic")
CLASS_TEMPLATES = (
    "{sev} {k0} changes consistent with {k1} disease.",
    "findings of {sev} {k0} pattern, likely {k1} etiology.",
    "there is {sev} {k0} involvement suggesting {k1} process.",
)
MOTION_TEMPLATES = (
    "{m} wall motion.",
    "global wall motion appears {m}.",
)
DISTRACTORS = (
    "no pericardial effusion.",
    "normal right ventricular size and function.",
    "aortic root is normal in caliber.",
    "no intracardiac thrombus identified.",
    "trace tricuspid regurgitation.",
    "left atrium is normal in size.",
    "small bilateral pleural effusions noted.",
    "comparison made with prior study.",
    "valves are grossly unremarkable.",
    "no evidence of pulmonary vein stenosis.",
)

_BLOB_WIDTH = (1.5, 2.2, 3.0)
_PATCH_HALF = (1, 2, 3)
_AMPLITUDE = (5.0, 9.0)
_CENTER_JITTER = 8.0
_STRETCH = 2.5


def class_keywords(c: int) -> tuple[str, str]:
    if c < len(CLASS_KEYWORDS):
        return CLASS_KEYWORDS[c]
    return (f"pattern{c}", f"variant{c}")


def class_name(c: int) -> str:
    return CLASS_NAMES[c] if c < len(CLASS_NAMES) else f"C{c}"


def _grid(h: int, w: int) -> tuple[np.ndarray, np.ndarray]:
    return np.mgrid[0:h, 0:w].astype(np.float64)


def _cine(rng, h, w, n_frames, direction, amplitude, width, elongate, noise):
    yy, xx = _grid(h, w)
    j = _CENTER_JITTER
    cy, cx = (h - 1) / 2 + rng.uniform(-j, j), (w - 1) / 2 + rng.uniform(-j, j)
    ring = np.exp(-((np.hypot(yy - h / 2, (xx - w / 2) * elongate) - 0.35 * h) ** 2) / 4.0)
    frames = []
    for t in range(n_frames):
        s = 2 * t / (n_frames - 1) - 1 if n_frames > 1 else 0.0
        py, px = cy + direction[0] * amplitude * s, cx + direction[1] * amplitude * s
        dy, dx = yy - py, (xx - px) * elongate
        along = dy * direction[0] + dx * direction[1]
        across = dx * direction[0] - dy * direction[1]
        blob = np.exp(-0.5 * ((along / (width * _STRETCH)) ** 2 + (across / width) ** 2))
        frames.append(0.3 * ring + blob + rng.normal(0, noise, size=(h, w)))
    return np.stack(frames)


def _lge(rng, h, w, n_frames, angle, half, noise, background):
    yy, xx = _grid(h, w)
    r = 0.3 * min(h, w)
    py, px = int(round(h / 2 + r * np.sin(angle))), int(round(w / 2 + r * np.cos(angle)))
    frames = []
    for k in range(n_frames):
        img = background * np.exp(-((yy - h / 2) ** 2 + (xx - w / 2) ** 2) / (0.1 * h * w))
        # the scar is brightest in the middle slices
        weight = 1.0 if n_frames == 1 else 0.6 + 0.4 * np.sin(np.pi * (k + 0.5) / n_frames)
        img[max(py - half, 0): py + half + 1, max(px - half, 0): px + half + 1] += weight
        frames.append(img + rng.normal(0, noise, size=(h, w)))
    return np.stack(frames)


def _impression(rng, c, sev, motion) -> str:
    k0, k1 = class_keywords(c)
    sentences = [
        CLASS_TEMPLATES[rng.integers(len(CLASS_TEMPLATES))].format(sev=SEVERITY_WORDS[sev], k0=k0, k1=k1),
        MOTION_TEMPLATES[rng.integers(len(MOTION_TEMPLATES))].format(m=MOTION_WORDS[motion]),
    ]
    n_distract = int(rng.integers(1, 3))
    picks = rng.choice(len(DISTRACTORS), size=n_distract, replace=False)
    sentences += [DISTRACTORS[i] for i in picks]
    order = rng.permutation(len(sentences))
    return " ".join(sentences[i] for i in order)


def gen_synthetic_corpus(
    n_studies: int,
    n_classes: int,
    seed: int,
    *,
    height: int = 32,
    width: int = 32,
    cine_frames: int = 6,
    lge_depth: int = 4,
    noise: float = 0.05,
) -> list[StudyManifest]:
    if n_studies < 2 or n_classes < 2:
        raise ValueError(f"need n_studies >= 2 and n_classes >= 2, got {n_studies}, {n_classes}")
    if cine_frames < 2 or lge_depth < 1:
        raise ValueError("cine_frames must be >= 2 and lge_depth >= 1")
    rng = np.random.default_rng(seed)
    classes = rng.permutation(np.arange(n_studies) % n_classes)
    corpus = []
    for i in range(n_studies):
        c = int(classes[i])
        sev = int(rng.integers(3))
        motion = int(rng.integers(2))
        theta = np.pi * c / n_classes
        direction = (np.sin(theta), np.cos(theta))
        scar_angle = theta + np.pi / n_classes
        series = [
            Series("CINE", "lax", _cine(rng, height, width, cine_frames, direction,
                                        _AMPLITUDE[motion], _BLOB_WIDTH[sev], 0.8, noise)),
            Series("CINE", "sax", _cine(rng, height, width, cine_frames, direction,
                                        _AMPLITUDE[motion], _BLOB_WIDTH[sev], 1.0, noise)),
            Series("LGE", "sax", _lge(rng, height, width, lge_depth, scar_angle, _PATCH_HALF[sev], noise, 0.2)),
        ]
        for view, bg in (("lax", 0.15), ("2ch", 0.1), ("3ch", 0.05)):
            series.append(Series("LGE", view, _lge(rng, height, width, 1, scar_angle, _PATCH_HALF[sev], noise, bg)))
        labels = {"class": c, "severity": sev, "motion": motion}
        labels.update({class_name(k): int(k == c) for k in range(n_classes)})
        corpus.append(StudyManifest(
            study_id=f"syn{seed}-{i:05d}",
            series=series,
            impression=_impression(rng, c, sev, motion),
            labels=labels,
        ))
    return corpus
