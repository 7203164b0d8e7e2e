"""The two towers, their projections and the temperature, bundled for training and inference."""

from __future__ import annotations

import os
from pathlib import Path

import numpy as np

from .alignment import Projection
from .autodiff import DiffTensor, load_checkpoint, save_checkpoint
from .config import RunConfig
from .nn import Module
from .text import TextEncoder, TokenizedText, Vocabulary, stack_tokens, tokenize
from .video import VideoEncoder


class DualEncoder(Module):
    def __init__(self, cfg: RunConfig, vocab_size: int, dtype=np.float32):
        self._cfg = cfg
        seed = cfg.seed
        self.video = VideoEncoder(cfg.video_config(), seed=seed, dtype=dtype)
        self.text = TextEncoder(cfg.text_config(vocab_size), seed=seed + 1, dtype=dtype)
        rng = np.random.default_rng(seed + 2)
        self.video_proj = Projection(rng, cfg.embed_dim, cfg.proj_dim, dtype)
        self.text_proj = Projection(rng, cfg.text_embed_dim, cfg.proj_dim, dtype)
        sigma = DiffTensor(np.asarray(cfg.sigma, dtype=dtype), requires_grad=cfg.learn_sigma)
        if cfg.learn_sigma:
            self.sigma = sigma
        else:
            self._sigma = sigma
        # one count per clip / per text pushed through a tower
        self._video_passes = 0
        self._text_passes = 0

    @property
    def config(self) -> RunConfig:
        return self._cfg

    @property
    def temperature(self) -> DiffTensor:
        return self.sigma if self._cfg.learn_sigma else self._sigma

    @property
    def forward_passes(self) -> dict[str, int]:
        return {"video": self._video_passes, "text": self._text_passes}

    def reset_counters(self) -> None:
        self._video_passes = self._text_passes = 0

    def embed_video(self, clips: np.ndarray) -> DiffTensor:
        """(B, M, 3, H, W) -> (B, dp) unit rows."""
        self._video_passes += clips.shape[0]
        return self.video_proj(self.video(clips))

    def embed_text(self, toks: list[TokenizedText]) -> DiffTensor:
        ids, mask = stack_tokens(toks)
        self._text_passes += ids.shape[0]
        return self.text_proj(self.text(ids, mask))

    def save(self, path: str | os.PathLike) -> None:
        save_checkpoint(path, self.state_dict())

    def load(self, path: str | os.PathLike) -> None:
        self.load_state_dict(load_checkpoint(path))


class RunArtifacts:
    """Files of a training run directory."""

    CONFIG = "config.txt"
    VOCAB = "vocab.txt"
    FINAL = "final.stal"
    BEST = "best.stal"
    INIT = "init.stal"
    METRICS = "metrics.jsonl"
    STEPS = "steps.jsonl"

    def __init__(self, root: str | os.PathLike):
        self.root = Path(root)

    def __getattr__(self, name):
        key = name.upper()
        if hasattr(type(self), key):
            return self.root / getattr(type(self), key)
        raise AttributeError(name)


def load_model(checkpoint: str | os.PathLike) -> tuple[DualEncoder, Vocabulary]:
    """Rebuild a model from a checkpoint and the config/vocab files beside it."""
    run = RunArtifacts(Path(checkpoint).parent)
    cfg = RunConfig.load(run.config)
    vocab = Vocabulary.load(run.vocab)
    model = DualEncoder(cfg, len(vocab))
    model.load(checkpoint)
    return model, vocab


def tokenize_all(texts: list[str], vocab: Vocabulary, max_len: int) -> list[TokenizedText]:
    return [tokenize(t, vocab, max_len) for t in texts]

