"""Run configuration: one flat dataclass, stored as ``key = value`` text."""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, fields

from .data.manifest import ViewSpec
from .text import TextConfig
from .video import SpaceTimeConfig


@dataclass
class RunConfig:
    profile: str = "desk"
    # video tower
    patch_size: int = 8
    embed_dim: int = 64
    num_blocks: int = 2
    num_heads: int = 4
    max_frames: int = 64
    height: int = 32
    width: int = 32
    # text tower
    text_embed_dim: int = 64
    text_layers: int = 2
    text_heads: int = 4
    max_len: int = 128
    min_freq: int = 2
    # alignment
    proj_dim: int = 32
    sigma: float = 0.05
    learn_sigma: bool = False
    # data and sampling
    view_spec: str = "CINE_lax-sax"
    frames: int = 4
    stride: int = 1
    train_fraction: float = 0.8
    # optimisation
    batch_size: int = 16
    epochs: int = 30
    lr: float = 1e-4
    seed: int = 0
    corpus: str = ""

    @classmethod
    def for_profile(cls, profile: str, **overrides) -> RunConfig:
        if profile == "desk":
            base = cls()
        elif profile == "paper-shape":
            base = cls(profile="paper-shape", patch_size=16, embed_dim=768, num_blocks=12,
                       num_heads=12, height=224, width=224, text_embed_dim=768, text_layers=6,
                       text_heads=12, proj_dim=256, frames=16, epochs=100, lr=3e-5,
                       view_spec="CINE_lax-sax+LGE_lax-sax-2ch-3ch")
        else:
            raise ValueError(f"unknown profile {profile!r}")
        return dataclasses.replace(base, **overrides)

    def video_config(self) -> SpaceTimeConfig:
        return SpaceTimeConfig(patch_size=self.patch_size, embed_dim=self.embed_dim,
                               num_blocks=self.num_blocks, num_heads=self.num_heads,
                               max_frames=self.max_frames, height=self.height, width=self.width)

    def text_config(self, vocab_size: int) -> TextConfig:
        return TextConfig(vocab_size=vocab_size, embed_dim=self.text_embed_dim,
                          num_layers=self.text_layers, num_heads=self.text_heads, max_len=self.max_len)

    def views(self) -> ViewSpec:
        return ViewSpec.parse(self.view_spec)

    def validate(self) -> None:
        self.video_config().validate()
        self.views()
        if self.frames < 1 or self.frames > self.max_frames:
            raise ValueError(f"frames must be in [1, {self.max_frames}], got {self.frames}")
        if self.batch_size < 2:
            raise ValueError("batch_size must be at least 2")
        if self.sigma <= 0:
            raise ValueError("sigma must be positive")
        if self.text_embed_dim % self.text_heads:
            raise ValueError("text_embed_dim must be divisible by text_heads")

    # -- key = value file ----------------------------------------------------
    def dumps(self) -> str:
        return "".join(f"{f.name} = {_fmt(getattr(self, f.name))}\n" for f in fields(self))

    @classmethod
    def loads(cls, text: str) -> RunConfig:
        types = {f.name: f.type for f in fields(cls)}
        values = {}
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"config line {lineno}: expected 'key = value'")
            key, value = (s.strip() for s in line.split("=", 1))
            if key not in types:
                raise ValueError(f"config line {lineno}: unknown key {key!r}")
            values[key] = _parse(value, types[key], key)
        profile = values.pop("profile", "desk")
        return cls.for_profile(profile, **values)

    def save(self, path: str | os.PathLike) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.dumps())

    @classmethod
    def load(cls, path: str | os.PathLike) -> RunConfig:
        with open(path, encoding="utf-8") as fh:
            return cls.loads(fh.read())


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _parse(value: str, typ: str, key: str):
    try:
        if typ == "bool":
            if value.lower() not in ("true", "false"):
                raise ValueError(value)
            return value.lower() == "true"
        if typ == "int":
            return int(value)
        if typ == "float":
            return float(value)
        return value
    except ValueError as exc:
        raise ValueError(f"config key {key!r}: cannot parse {value!r} as {typ}") from exc
