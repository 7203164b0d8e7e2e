"""Space-time transformer over video clips.

Tokens are kept split as a ``[CLS]`` row per clip plus a ``(B, M, N, d)``
patch grid; ``TokenGrid.tokens()`` gives the flat ``1 + M*N`` sequence view.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import DiffTensor
from .nn import MLP, LayerNorm, Linear, Module, MultiHeadAttention, param


class CapacityError(ValueError):
    """Clip exceeds the frame or patch capacity of the positional tables."""


@dataclass
class SpaceTimeConfig:
    patch_size: int = 8
    embed_dim: int = 64
    num_blocks: int = 2
    num_heads: int = 4
    max_frames: int = 64
    height: int = 32
    width: int = 32
    mlp_ratio: int = 4
    ln_eps: float = 1e-5

    @classmethod
    def desk(cls) -> SpaceTimeConfig:
        return cls()

    @classmethod
    def full_size(cls) -> SpaceTimeConfig:
        return cls(patch_size=16, embed_dim=768, num_blocks=12, num_heads=12,
                   max_frames=64, height=224, width=224)

    @property
    def max_patches(self) -> int:
        return (self.height // self.patch_size) * (self.width // self.patch_size)

    def validate(self) -> None:
        P = self.patch_size
        if self.height % P or self.width % P:
            raise ValueError(
                f"resolution {self.height}x{self.width} is not divisible by patch size {P}"
            )
        if self.embed_dim % self.num_heads:
            raise ValueError(f"embed_dim {self.embed_dim} not divisible by {self.num_heads} heads")
        if self.max_frames < 1 or self.num_blocks < 1:
            raise ValueError("max_frames and num_blocks must be positive")


@dataclass
class TokenGrid:
    cls: DiffTensor  # (B, d)
    patches: DiffTensor  # (B, M, N, d)

    @property
    def num_frames(self) -> int:
        return self.patches.shape[1]

    @property
    def num_patches(self) -> int:
        return self.patches.shape[2]

    def tokens(self) -> DiffTensor:
        """Flat ``(B, 1 + M*N, d)`` sequence with [CLS] at position 0."""
        B, M, N, d = self.patches.shape
        flat = ad.reshape(self.patches, (B, M * N, d))
        return ad.concat([ad.reshape(self.cls, (B, 1, d)), flat], axis=1)

    @property
    def frame_index(self) -> np.ndarray:
        """Frame of each flat position 1..M*N."""
        return np.repeat(np.arange(self.num_frames), self.num_patches)

    @property
    def patch_index(self) -> np.ndarray:
        return np.tile(np.arange(self.num_patches), self.num_frames)


def extract_patches(video: np.ndarray, patch_size: int) -> np.ndarray:
    """(B, M, 3, H, W) -> (B, M, N, 3*P*P), patches in row-major grid order."""
    B, M, C, H, W = video.shape
    P = patch_size
    if H % P or W % P:
        raise ValueError(f"frame size {H}x{W} is not divisible by patch size {P}")
    x = video.reshape(B, M, C, H // P, P, W // P, P)
    x = x.transpose(0, 1, 3, 5, 2, 4, 6)
    return x.reshape(B, M, (H // P) * (W // P), C * P * P)


class PositionalState(Module):
    def __init__(self, rng: np.random.Generator, cfg: SpaceTimeConfig, dtype=np.float32):
        d = cfg.embed_dim
        self.spatial_embed = param(rng.normal(0.0, 0.02, size=(cfg.max_patches, d)), dtype)
        self.temporal_embed = param(np.zeros((cfg.max_frames, d)), dtype)
        self.cls_embed = param(rng.normal(0.0, 0.02, size=(1, d)), dtype)


class SpaceTimeBlock(Module):
    """Divided attention: temporal pass across frames, then spatial pass within each frame.

    The spatial residual is taken from the block input rather than from the
    temporal output; the temporal output only feeds the spatial attention.
    """

    def __init__(self, rng: np.random.Generator, cfg: SpaceTimeConfig, dtype=np.float32):
        d = cfg.embed_dim
        self.norm_t = LayerNorm(d, cfg.ln_eps, dtype)
        self.temporal_attn = MultiHeadAttention(rng, d, cfg.num_heads, zero_out=True, dtype=dtype)
        self.norm_s = LayerNorm(d, cfg.ln_eps, dtype)
        self.spatial_attn = MultiHeadAttention(rng, d, cfg.num_heads, dtype=dtype)
        self.norm_m = LayerNorm(d, cfg.ln_eps, dtype)
        self.mlp = MLP(rng, d, cfg.mlp_ratio * d, dtype)

    def __call__(self, grid: TokenGrid, trace: list | None = None) -> TokenGrid:
        cls, x = grid.cls, grid.patches
        B, M, N, d = x.shape

        # temporal attention at fixed patch index; [CLS] does not take part
        xt = ad.transpose(self.norm_t(x), (0, 2, 1, 3))
        t_out = ad.transpose(self.temporal_attn(xt, trace=trace), (0, 2, 1, 3))
        u = x + t_out

        # spatial attention per frame, [CLS] replicated into every frame
        cls_n = ad.expand(ad.reshape(self.norm_s(cls), (B, 1, 1, d)), (B, M, 1, d))
        seq = ad.concat([cls_n, self.norm_s(u)], axis=2)
        s_out = self.spatial_attn(seq, trace=trace)
        w_cls = cls + ad.mean(s_out[:, :, 0, :], axis=1)
        w = x + s_out[:, :, 1:, :]

        out_cls = w_cls + self.mlp(self.norm_m(w_cls))
        out = w + self.mlp(self.norm_m(w))
        return TokenGrid(out_cls, out)


class VideoEncoder(Module):
    def __init__(self, cfg: SpaceTimeConfig, seed: int = 0, dtype=np.float32):
        cfg.validate()
        self._cfg = cfg
        rng = np.random.default_rng(seed)
        P = cfg.patch_size
        self.patch_embed = Linear(rng, 3 * P * P, cfg.embed_dim, dtype=dtype)
        self.pos = PositionalState(rng, cfg, dtype)
        self.blocks = [SpaceTimeBlock(rng, cfg, dtype) for _ in range(cfg.num_blocks)]
        self.norm = LayerNorm(cfg.embed_dim, cfg.ln_eps, dtype)
        self._dtype = dtype

    @property
    def config(self) -> SpaceTimeConfig:
        return self._cfg

    def patchify(self, video: np.ndarray) -> TokenGrid:
        """Linear patch embedding; equivalent to a stride-P conv with a PxP kernel."""
        video = np.asarray(video, dtype=self._dtype)
        if video.ndim == 4:
            video = video[None]
        if video.ndim != 5 or video.shape[2] != 3:
            raise ValueError(f"expected (B, M, 3, H, W) or (M, 3, H, W), got {video.shape}")
        B, M, _, H, W = video.shape
        cfg = self._cfg
        if H % cfg.patch_size or W % cfg.patch_size:
            raise ValueError(f"frame size H={H}, W={W} is not divisible by patch size P={cfg.patch_size}")
        if M > cfg.max_frames:
            raise CapacityError(f"clip has {M} frames, capacity is {cfg.max_frames}")
        N = (H // cfg.patch_size) * (W // cfg.patch_size)
        if N > cfg.max_patches:
            raise CapacityError(f"clip has {N} patches per frame, capacity is {cfg.max_patches}")
        patches = self.patch_embed(DiffTensor(extract_patches(video, cfg.patch_size)))
        cls = ad.expand(self.pos.cls_embed, (B, cfg.embed_dim))
        return TokenGrid(cls, patches)

    def add_positional(self, grid: TokenGrid) -> TokenGrid:
        B, M, N, d = grid.patches.shape
        es = ad.reshape(self.pos.spatial_embed[:N], (1, 1, N, d))
        et = ad.reshape(self.pos.temporal_embed[:M], (1, M, 1, d))
        pos = ad.expand(es, (B, M, N, d)) + ad.expand(et, (B, M, N, d))
        return TokenGrid(grid.cls, grid.patches + pos)

    def __call__(self, video: np.ndarray, trace: list | None = None) -> DiffTensor:
        """Raw [CLS] embedding, shape (B, d) (or (1, d) for a single clip)."""
        grid = self.add_positional(self.patchify(video))
        for block in self.blocks:
            grid = block(grid, trace)
        return self.norm(grid.cls)


def encode_video(video: np.ndarray, encoder: VideoEncoder) -> np.ndarray:
    """Encode one ``(M, 3, H, W)`` clip to its d-dimensional embedding."""
    with ad.no_grad():
        return encoder(video).data[0]
