"""Word-level tokenizer with byte fallback and a bidirectional transformer encoder."""

from __future__ import annotations

import os
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import DiffTensor
from .nn import EncoderBlock, LayerNorm, Module, param

PAD, UNK, CLS, SEP = "[PAD]", "[UNK]", "[CLS]", "[SEP]"
SPECIALS = (PAD, UNK, CLS, SEP)
BYTE_TOKENS = tuple(f"<0x{b:02X}>" for b in range(256))
FIRST_WORD_ID = len(SPECIALS) + len(BYTE_TOKENS)  # 260


class Vocabulary:
    """Specials, then the 256 byte tokens, then corpus words (ids >= 260)."""

    def __init__(self, words: Iterable[str] = ()):
        self.tokens: list[str] = list(SPECIALS) + list(BYTE_TOKENS)
        self._word_ids: dict[str, int] = {}
        for w in words:
            self.add_word(w)

    def add_word(self, word: str) -> int:
        if word in self._word_ids:
            return self._word_ids[word]
        if word in SPECIALS or word in BYTE_TOKENS or not word or any(c.isspace() for c in word):
            raise ValueError(f"invalid vocabulary word {word!r}")
        self._word_ids[word] = len(self.tokens)
        self.tokens.append(word)
        return self._word_ids[word]

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, word: str) -> bool:
        return word in self._word_ids

    def word_id(self, word: str) -> int | None:
        return self._word_ids.get(word)

    pad_id = property(lambda self: 0)
    unk_id = property(lambda self: 1)
    cls_id = property(lambda self: 2)
    sep_id = property(lambda self: 3)

    @staticmethod
    def byte_id(b: int) -> int:
        return len(SPECIALS) + b

    @classmethod
    def build(cls, texts: Iterable[str], min_freq: int = 2) -> Vocabulary:
        """Words seen at least ``min_freq`` times, most frequent first, ties alphabetical."""
        counts = Counter(w for t in texts for w in normalize(t))
        kept = sorted((w for w, c in counts.items() if c >= min_freq), key=lambda w: (-counts[w], w))
        return cls(w for w in kept if w not in SPECIALS and w not in BYTE_TOKENS)

    def save(self, path: str | os.PathLike) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("\n".join(self.tokens) + "\n")

    @classmethod
    def load(cls, path: str | os.PathLike) -> Vocabulary:
        with open(path, encoding="utf-8") as fh:
            lines = fh.read().split("\n")
        if lines and lines[-1] == "":
            lines.pop()
        head = list(SPECIALS) + list(BYTE_TOKENS)
        if lines[: len(head)] != head:
            raise ValueError(f"{path}: vocabulary does not start with the special and byte tokens")
        return cls(lines[len(head):])


def normalize(text: str) -> list[str]:
    return text.lower().split()


@dataclass
class TokenizedText:
    ids: np.ndarray  # (max_len,) int64
    attention_mask: np.ndarray  # (max_len,) int8
    max_len: int

    @property
    def length(self) -> int:
        return int(self.attention_mask.sum())


def tokenize(text: str, vocab: Vocabulary, max_len: int = 128) -> TokenizedText:
    if max_len < 2:
        raise ValueError("max_len must leave room for [CLS] and [SEP]")
    body: list[int] = []
    for word in normalize(text):
        wid = vocab.word_id(word)
        if wid is not None:
            body.append(wid)
        else:
            body.extend(vocab.byte_id(b) for b in word.encode("utf-8"))
    body = body[: max_len - 2]
    ids = [vocab.cls_id, *body, vocab.sep_id]
    n = len(ids)
    out = np.full(max_len, vocab.pad_id, dtype=np.int64)
    out[:n] = ids
    mask = np.zeros(max_len, dtype=np.int8)
    mask[:n] = 1
    return TokenizedText(out, mask, max_len)


@dataclass
class TextConfig:
    vocab_size: int = 512
    embed_dim: int = 64
    num_layers: int = 2
    num_heads: int = 4
    max_len: int = 128
    mlp_ratio: int = 4
    ln_eps: float = 1e-5

    @classmethod
    def full_size(cls, vocab_size: int) -> TextConfig:
        return cls(vocab_size=vocab_size, embed_dim=768, num_layers=6, num_heads=12)

    def validate(self) -> None:
        if self.embed_dim % self.num_heads:
            raise ValueError(f"embed_dim {self.embed_dim} not divisible by {self.num_heads} heads")
        if self.vocab_size < FIRST_WORD_ID:
            raise ValueError(f"vocab_size must be at least {FIRST_WORD_ID}")


class TextEncoder(Module):
    def __init__(self, cfg: TextConfig, seed: int = 0, dtype=np.float32):
        cfg.validate()
        self._cfg = cfg
        rng = np.random.default_rng(seed)
        d = cfg.embed_dim
        self.token_embed = param(rng.normal(0.0, 0.02, size=(cfg.vocab_size, d)), dtype)
        self.pos_embed = param(rng.normal(0.0, 0.02, size=(cfg.max_len, d)), dtype)
        self.blocks = [EncoderBlock(rng, d, cfg.num_heads, cfg.mlp_ratio, cfg.ln_eps, dtype)
                       for _ in range(cfg.num_layers)]
        self.norm = LayerNorm(d, cfg.ln_eps, dtype)

    @property
    def config(self) -> TextConfig:
        return self._cfg

    def hidden_states(self, ids: np.ndarray, mask: np.ndarray, trace: list | None = None) -> list[DiffTensor]:
        """Per-layer ``(B, T, d)`` states: embeddings, each block output, final norm."""
        ids = np.atleast_2d(np.asarray(ids, dtype=np.int64))
        mask = np.atleast_2d(np.asarray(mask)).astype(bool)
        B, T = ids.shape
        if T > self._cfg.max_len:
            raise ValueError(f"sequence length {T} exceeds max_len {self._cfg.max_len}")
        d = self._cfg.embed_dim
        x = ad.embedding(self.token_embed, ids)
        x = x + ad.expand(ad.reshape(self.pos_embed[:T], (1, T, d)), (B, T, d))
        states = [x]
        for block in self.blocks:
            x = block(x, mask, trace)
            states.append(x)
        states.append(self.norm(x))
        return states

    def __call__(self, ids: np.ndarray, mask: np.ndarray, trace: list | None = None) -> DiffTensor:
        """Final-layer [CLS] rows, shape (B, d)."""
        return self.hidden_states(ids, mask, trace)[-1][:, 0, :]


def stack_tokens(toks: Sequence[TokenizedText]) -> tuple[np.ndarray, np.ndarray]:
    """Batch arrays trimmed to the longest unpadded sequence in the batch.

    Trimming trailing padding does not change any unpadded output because
    padded keys are masked out of attention.
    """
    ids = np.stack([t.ids for t in toks])
    mask = np.stack([t.attention_mask for t in toks])
    width = max(int(mask.sum(axis=1).max()), 1)
    return ids[:, :width], mask[:, :width]


def encode_text(tok: TokenizedText, encoder: TextEncoder) -> np.ndarray:
    with ad.no_grad():
        return encoder(tok.ids[None], tok.attention_mask[None]).data[0]
