"""Parameter containers and transformer building blocks."""

from __future__ import annotations

import math
from typing import Iterator

import numpy as np

from . import autodiff as ad
from .autodiff import DiffTensor


class ParameterMismatchError(ValueError):
    """A state dict does not fit the module it is being loaded into."""


class Module:
    """Attribute-walking parameter container.

    Any attribute holding a ``requires_grad`` DiffTensor is a parameter; any
    attribute holding a Module (or a list of them) is a child.
    """

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, DiffTensor]]:
        for name, value in vars(self).items():
            if name.startswith("_"):
                continue
            full = f"{prefix}{name}"
            if isinstance(value, DiffTensor) and value.requires_grad:
                yield full, value
            elif isinstance(value, Module):
                yield from value.named_parameters(full + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{full}.{i}.")

    def parameters(self) -> dict[str, DiffTensor]:
        return dict(self.named_parameters())

    def zero_grad(self) -> None:
        for p in self.parameters().values():
            p.grad = None

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.data for k, v in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        params = self.parameters()
        missing = sorted(set(params) - set(state))
        if missing:
            raise ParameterMismatchError(f"checkpoint lacks parameter {missing[0]!r}")
        unexpected = sorted(set(state) - set(params))
        if unexpected:
            raise ParameterMismatchError(f"checkpoint has unknown parameter {unexpected[0]!r}")
        for name, p in params.items():
            arr = np.asarray(state[name])
            if arr.shape != p.shape:
                raise ParameterMismatchError(
                    f"parameter {name!r}: checkpoint shape {arr.shape} != model shape {p.shape}"
                )
        for name, p in params.items():
            p.data = np.array(state[name], dtype=p.dtype)


def param(arr: np.ndarray, dtype) -> DiffTensor:
    return DiffTensor(np.asarray(arr, dtype=dtype), requires_grad=True)


class Linear(Module):
    def __init__(self, rng: np.random.Generator, d_in: int, d_out: int, *, std: float = 0.02,
                 zero: bool = False, dtype=np.float32):
        w = np.zeros((d_in, d_out)) if zero else rng.normal(0.0, std, size=(d_in, d_out))
        self.weight = param(w, dtype)
        self.bias = param(np.zeros(d_out), dtype)

    def __call__(self, x: DiffTensor) -> DiffTensor:
        return ad.linear(x, self.weight, self.bias)


class LayerNorm(Module):
    def __init__(self, dim: int, eps: float = 1e-5, dtype=np.float32):
        self.gamma = param(np.ones(dim), dtype)
        self.beta = param(np.zeros(dim), dtype)
        self._eps = eps

    def __call__(self, x: DiffTensor) -> DiffTensor:
        return ad.layer_norm(x, self.gamma, self.beta, self._eps)


class MultiHeadAttention(Module):
    """Self-attention over the second-to-last axis of ``(..., T, d)`` inputs."""

    def __init__(self, rng: np.random.Generator, dim: int, num_heads: int, *,
                 zero_out: bool = False, dtype=np.float32):
        if dim % num_heads:
            raise ValueError(f"embed dim {dim} is not divisible by {num_heads} heads")
        self.qkv = Linear(rng, dim, 3 * dim, dtype=dtype)
        self.proj = Linear(rng, dim, dim, zero=zero_out, dtype=dtype)
        self._heads = num_heads
        self._dim = dim

    def __call__(self, x: DiffTensor, key_mask: np.ndarray | None = None,
                 trace: list | None = None) -> DiffTensor:
        """``key_mask`` is a bool array over ``x.shape[:-1]``; False keys get zero weight."""
        lead, T, d = x.shape[:-2], x.shape[-2], x.shape[-1]
        h = self._heads
        dh = d // h
        qkv = self.qkv(x)
        qkv = ad.reshape(qkv, lead + (T, 3, h, dh))
        n = len(lead)
        # -> (3, *lead, h, T, dh)
        qkv = ad.transpose(qkv, (n + 1,) + tuple(range(n)) + (n + 2, n, n + 3))
        q, k, v = qkv[0], qkv[1], qkv[2]
        scores = ad.matmul(q, ad.swapaxes(k, -1, -2)) * (1.0 / math.sqrt(dh))
        mask = None
        if key_mask is not None:
            # (*lead, T) -> (*lead, 1, 1, T)
            mask = np.asarray(key_mask, dtype=bool)[..., None, None, :]
        probs = ad.softmax(scores, axis=-1, mask=mask)
        if trace is not None:
            trace.append(probs.data)
        ctx = ad.matmul(probs, v)  # (*lead, h, T, dh)
        ctx = ad.transpose(ctx, tuple(range(n)) + (n + 1, n, n + 2))
        ctx = ad.reshape(ctx, lead + (T, d))
        return self.proj(ctx)


class MLP(Module):
    def __init__(self, rng: np.random.Generator, dim: int, hidden: int, dtype=np.float32):
        self.fc1 = Linear(rng, dim, hidden, dtype=dtype)
        self.fc2 = Linear(rng, hidden, dim, dtype=dtype)

    def __call__(self, x: DiffTensor) -> DiffTensor:
        return self.fc2(ad.gelu(self.fc1(x)))


class EncoderBlock(Module):
    """Pre-norm transformer block: attention then MLP, each with a residual."""

    def __init__(self, rng: np.random.Generator, dim: int, num_heads: int, mlp_ratio: int = 4,
                 eps: float = 1e-5, dtype=np.float32):
        self.norm1 = LayerNorm(dim, eps, dtype)
        self.attn = MultiHeadAttention(rng, dim, num_heads, dtype=dtype)
        self.norm2 = LayerNorm(dim, eps, dtype)
        self.mlp = MLP(rng, dim, mlp_ratio * dim, dtype)

    def __call__(self, x: DiffTensor, key_mask=None, trace: list | None = None) -> DiffTensor:
        x = x + self.attn(self.norm1(x), key_mask, trace)
        return x + self.mlp(self.norm2(x))
