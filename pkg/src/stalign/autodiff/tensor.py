"""Dense tensors with tape-based reverse-mode differentiation.

Every op records a closure that maps the output gradient to the gradients of
its inputs. ``DiffTensor.backward`` walks that tape once in reverse
topological order and deposits gradients on the ``requires_grad`` leaves.

Storage defaults to float32; reductions accumulate in float64. Pass float64
arrays in to get a float64 graph (used for finite-difference checks).
"""

from __future__ import annotations

import contextlib
import threading
from typing import Callable, Iterable, Sequence

import numpy as np

DEFAULT_DTYPE = np.float32

_state = threading.local()


def is_grad_enabled() -> bool:
    return getattr(_state, "grad_enabled", True)


@contextlib.contextmanager
def no_grad():
    """Disable tape recording in the current thread."""
    prev = is_grad_enabled()
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = prev


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested op."""


class BackwardError(RuntimeError):
    """backward() was called in a way the tape contract forbids."""


def _as_array(data, dtype=None) -> np.ndarray:
    if isinstance(data, DiffTensor):
        data = data.data
    arr = np.asarray(data)
    if dtype is not None:
        return arr.astype(dtype, copy=False)
    if arr.dtype in (np.float32, np.float64):
        return arr
    return arr.astype(DEFAULT_DTYPE)


class DiffTensor:
    __slots__ = ("data", "grad", "requires_grad", "_backward", "_parents", "_op", "_consumed")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        self.data: np.ndarray = _as_array(data, dtype)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None
        self._parents: tuple[DiffTensor, ...] = ()
        self._op = "leaf"
        self._consumed = False

    # -- basic properties ---------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def is_leaf(self) -> bool:
        return self._backward is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> DiffTensor:
        return DiffTensor(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"DiffTensor(shape={self.shape}, dtype={self.dtype}, op={self._op}{flag})"

    # -- operators ----------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return getitem(self, key)

    # -- differentiation ----------------------------------------------------
    def backward(self) -> None:
        """Backpropagate from this scalar through its tape.

        A tape can be consumed once. Leaves must have had their gradient
        reset (``zero_grad``) before a new backward pass writes to them.
        """
        if self.data.size != 1:
            raise BackwardError(f"backward() needs a scalar loss, got shape {self.shape}")
        if self._consumed:
            raise BackwardError("this tape has already been backpropagated")
        order = _topo_order(self)
        for node in order:
            if node._consumed:
                raise BackwardError("graph shares nodes with an already-consumed tape")
        for node in order:
            if node.is_leaf and node.requires_grad and node.grad is not None:
                raise BackwardError("leaf already holds a gradient; call zero_grad() first")

        grads: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if node.is_leaf:
                if node.requires_grad and g is not None:
                    node.grad = g
                continue
            node._consumed = True
            if g is None:
                continue
            parent_grads = node._backward(g)
            for parent, pg in zip(node._parents, parent_grads):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg
            node._backward = _spent
            node._parents = ()
        for node in order:
            if node.requires_grad and node.is_leaf and node.grad is None:
                node.grad = np.zeros_like(node.data)


def _spent(g):
    raise BackwardError("this tape has already been backpropagated")


def _topo_order(root: DiffTensor) -> list[DiffTensor]:
    order: list[DiffTensor] = []
    seen: set[int] = set()
    stack: list[tuple[DiffTensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def tensor(data, requires_grad: bool = False, dtype=None) -> DiffTensor:
    return DiffTensor(data, requires_grad=requires_grad, dtype=dtype)


def _wrap(x) -> DiffTensor:
    if isinstance(x, DiffTensor):
        return x
    return DiffTensor(np.asarray(x, dtype=np.float64) if np.isscalar(x) else x)


def _result(data: np.ndarray, parents: Iterable[DiffTensor], backward, op: str) -> DiffTensor:
    parents = tuple(parents)
    out = DiffTensor(data)
    if is_grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
        out._op = op
    return out


def _result_dtype(*ts: DiffTensor):
    dts = [t.dtype for t in ts if t.size != 1 or t.ndim > 0]
    if not dts:
        dts = [t.dtype for t in ts]
    return np.result_type(*dts)


def _sum_to_shape(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    if len(shape) == 0 or int(np.prod(shape)) == 1:
        return np.asarray(g.sum(dtype=np.float64), dtype=g.dtype).reshape(shape)
    lead = g.ndim - len(shape)
    axes = tuple(range(lead)) + tuple(
        i + lead for i, n in enumerate(shape) if n == 1 and g.shape[i + lead] != 1
    )
    return g.sum(axis=axes, dtype=np.float64).astype(g.dtype).reshape(shape)


def _check_binary(a: DiffTensor, b: DiffTensor, op: str) -> None:
    # same shape, scalar operand, or bias along the last axis
    if a.shape == b.shape or a.size == 1 or b.size == 1:
        return
    small, big = (a, b) if a.ndim < b.ndim else (b, a)
    if small.ndim == 1 and big.ndim >= 1 and small.shape[0] == big.shape[-1]:
        return
    raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}")


# -- elementwise arithmetic -------------------------------------------------
def add(a, b) -> DiffTensor:
    a, b = _wrap(a), _wrap(b)
    _check_binary(a, b, "add")
    dt = _result_dtype(a, b)
    out = (a.data + b.data).astype(dt, copy=False)

    def backward(g):
        return _sum_to_shape(g, a.shape), _sum_to_shape(g, b.shape)

    return _result(out, (a, b), backward, "add")


def sub(a, b) -> DiffTensor:
    a, b = _wrap(a), _wrap(b)
    _check_binary(a, b, "sub")
    dt = _result_dtype(a, b)
    out = (a.data - b.data).astype(dt, copy=False)

    def backward(g):
        return _sum_to_shape(g, a.shape), _sum_to_shape(-g, b.shape)

    return _result(out, (a, b), backward, "sub")


def mul(a, b) -> DiffTensor:
    a, b = _wrap(a), _wrap(b)
    _check_binary(a, b, "mul")
    dt = _result_dtype(a, b)
    out = (a.data * b.data).astype(dt, copy=False)

    def backward(g):
        ga = _sum_to_shape((g * b.data).astype(dt, copy=False), a.shape) if a.requires_grad else None
        gb = _sum_to_shape((g * a.data).astype(dt, copy=False), b.shape) if b.requires_grad else None
        return ga, gb

    return _result(out, (a, b), backward, "mul")


def div(a, b) -> DiffTensor:
    a, b = _wrap(a), _wrap(b)
    _check_binary(a, b, "div")
    dt = _result_dtype(a, b)
    out = (a.data / b.data).astype(dt, copy=False)

    def backward(g):
        ga = _sum_to_shape((g / b.data).astype(dt, copy=False), a.shape) if a.requires_grad else None
        gb = None
        if b.requires_grad:
            gb = _sum_to_shape((-g * a.data / (b.data * b.data)).astype(dt, copy=False), b.shape)
        return ga, gb

    return _result(out, (a, b), backward, "div")


def exp(x: DiffTensor) -> DiffTensor:
    out = np.exp(x.data)
    return _result(out, (x,), lambda g: (g * out,), "exp")


def log(x: DiffTensor) -> DiffTensor:
    out = np.log(x.data)
    return _result(out, (x,), lambda g: (g / x.data,), "log")


def tanh(x: DiffTensor) -> DiffTensor:
    out = np.tanh(x.data)
    return _result(out, (x,), lambda g: (g * (1.0 - out * out),), "tanh")


_GELU_K = np.sqrt(2.0 / np.pi)


def gelu(x: DiffTensor) -> DiffTensor:
    """GELU, tanh approximation."""
    xd = x.data
    inner = _GELU_K * (xd + 0.044715 * xd**3)
    t = np.tanh(inner)
    out = (0.5 * xd * (1.0 + t)).astype(xd.dtype, copy=False)

    def backward(g):
        dinner = _GELU_K * (1.0 + 3 * 0.044715 * xd * xd)
        d = 0.5 * (1.0 + t) + 0.5 * xd * (1.0 - t * t) * dinner
        return ((g * d).astype(xd.dtype, copy=False),)

    return _result(out, (x,), backward, "gelu")


# -- linear algebra ---------------------------------------------------------
def matmul(a: DiffTensor, b: DiffTensor) -> DiffTensor:
    """Matrix product over the last two axes; leading axes must match exactly."""
    a, b = _wrap(a), _wrap(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2] or a.shape[:-2] != b.shape[:-2]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    out = np.matmul(a.data, b.data)

    def backward(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2)) if a.requires_grad else None
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g) if b.requires_grad else None
        return ga, gb

    return _result(out, (a, b), backward, "matmul")


def linear(x: DiffTensor, weight: DiffTensor, bias: DiffTensor | None = None) -> DiffTensor:
    """``x @ weight + bias`` over the last axis of ``x``; weight is (in, out)."""
    if weight.ndim != 2 or x.shape[-1] != weight.shape[0]:
        raise ShapeError(f"linear: input {x.shape} does not match weight {weight.shape}")
    if bias is not None and bias.shape != (weight.shape[1],):
        raise ShapeError(f"linear: bias {bias.shape} does not match weight {weight.shape}")
    lead = x.shape[:-1]
    x2 = x.data.reshape(-1, x.shape[-1])
    out = x2 @ weight.data
    if bias is not None:
        out = out + bias.data
    out = out.reshape(lead + (weight.shape[1],))
    parents = (x, weight) if bias is None else (x, weight, bias)

    def backward(g):
        g2 = g.reshape(-1, weight.shape[1])
        gx = (g2 @ weight.data.T).reshape(x.shape) if x.requires_grad else None
        gw = x2.T @ g2 if weight.requires_grad else None
        if bias is None:
            return gx, gw
        gb = g2.sum(axis=0, dtype=np.float64).astype(g.dtype) if bias.requires_grad else None
        return gx, gw, gb

    return _result(out, parents, backward, "linear")


# -- normalisation and probabilities ---------------------------------------
def _masked(x: np.ndarray, mask) -> np.ndarray:
    if mask is None:
        return x
    return np.where(mask, x, -np.inf)


def softmax(x: DiffTensor, axis: int = -1, mask=None) -> DiffTensor:
    """Max-shifted softmax. ``mask`` (broadcastable bools) zeroes out positions exactly."""
    z = _masked(x.data, mask)
    m = np.max(z, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    e = np.exp(z - m)
    s = e.sum(axis=axis, keepdims=True, dtype=np.float64)
    out = (e / np.where(s > 0, s, 1.0)).astype(x.dtype, copy=False)

    def backward(g):
        inner = (g * out).sum(axis=axis, keepdims=True, dtype=np.float64)
        return ((out * (g - inner)).astype(x.dtype, copy=False),)

    return _result(out, (x,), backward, "softmax")


def log_softmax(x: DiffTensor, axis: int = -1) -> DiffTensor:
    xd = x.data
    m = np.max(xd, axis=axis, keepdims=True)
    lse = np.log(np.exp(xd - m).sum(axis=axis, keepdims=True, dtype=np.float64)) + m
    out = (xd - lse).astype(xd.dtype, copy=False)

    def backward(g):
        p = np.exp(out)
        total = g.sum(axis=axis, keepdims=True, dtype=np.float64)
        return ((g - p * total).astype(xd.dtype, copy=False),)

    return _result(out, (x,), backward, "log_softmax")


def layer_norm(x: DiffTensor, gamma: DiffTensor, beta: DiffTensor, eps: float = 1e-5) -> DiffTensor:
    """Normalise over the last axis, then scale by ``gamma`` and shift by ``beta``."""
    n = x.shape[-1]
    if n < 2:
        raise ShapeError(f"layer_norm needs a last axis of length >= 2, got {x.shape}")
    if gamma.shape != (n,) or beta.shape != (n,):
        raise ShapeError(f"layer_norm: gamma {gamma.shape} / beta {beta.shape} vs input {x.shape}")
    x64 = x.data.astype(np.float64)
    mu = x64.mean(axis=-1, keepdims=True)
    xc = x64 - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv_std
    dt = x.dtype
    out = (xhat * gamma.data + beta.data).astype(dt)

    def backward(g):
        g64 = g.astype(np.float64)
        lead = tuple(range(g.ndim - 1))
        gg = (g64 * xhat).sum(axis=lead).astype(gamma.dtype) if gamma.requires_grad else None
        gb = g64.sum(axis=lead).astype(beta.dtype) if beta.requires_grad else None
        gx = None
        if x.requires_grad:
            dxhat = g64 * gamma.data
            gx = inv_std * (
                dxhat
                - dxhat.mean(axis=-1, keepdims=True)
                - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
            )
            gx = gx.astype(dt)
        return gx, gg, gb

    return _result(out, (x, gamma, beta), backward, "layer_norm")


def l2_normalize(x: DiffTensor, axis: int = -1, eps: float = 1e-12) -> DiffTensor:
    """``x / (||x|| + eps)`` along ``axis``."""
    x64 = x.data.astype(np.float64)
    norm = np.sqrt((x64 * x64).sum(axis=axis, keepdims=True))
    s = norm + eps
    out = (x64 / s).astype(x.dtype)

    def backward(g):
        g64 = g.astype(np.float64)
        dot = (g64 * x64).sum(axis=axis, keepdims=True)
        safe = np.where(norm > 0, norm, 1.0)
        corr = np.where(norm > 0, dot / (s * s * safe), 0.0)
        return ((g64 / s - corr * x64).astype(x.dtype),)

    return _result(out, (x,), backward, "l2_normalize")


# -- reductions -------------------------------------------------------------
def _norm_axes(axis, ndim: int) -> tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(sorted(a % ndim for a in axis))


def sum(x: DiffTensor, axis=None, keepdims: bool = False) -> DiffTensor:  # noqa: A001
    axes = _norm_axes(axis, x.ndim)
    out = x.data.sum(axis=axes, keepdims=keepdims, dtype=np.float64).astype(x.dtype)

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, x.shape).astype(x.dtype),)

    return _result(out, (x,), backward, "sum")


def mean(x: DiffTensor, axis=None, keepdims: bool = False) -> DiffTensor:
    axes = _norm_axes(axis, x.ndim)
    count = int(np.prod([x.shape[a] for a in axes])) if axes else 1
    out = x.data.mean(axis=axes, keepdims=keepdims, dtype=np.float64).astype(x.dtype)

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return ((np.broadcast_to(g, x.shape) / count).astype(x.dtype),)

    return _result(out, (x,), backward, "mean")


# -- shape manipulation -----------------------------------------------------
def reshape(x: DiffTensor, shape: Sequence[int]) -> DiffTensor:
    out = x.data.reshape(shape)
    return _result(out, (x,), lambda g: (g.reshape(x.shape),), "reshape")


def transpose(x: DiffTensor, axes: Sequence[int]) -> DiffTensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    out = np.transpose(x.data, axes)
    return _result(out, (x,), lambda g: (np.transpose(g, inv),), "transpose")


def swapaxes(x: DiffTensor, a: int, b: int) -> DiffTensor:
    axes = list(range(x.ndim))
    axes[a], axes[b] = axes[b], axes[a]
    return transpose(x, axes)


def expand(x: DiffTensor, shape: Sequence[int]) -> DiffTensor:
    """Explicit broadcast to ``shape`` (numpy rules); gradients are summed back."""
    shape = tuple(shape)
    try:
        out = np.broadcast_to(x.data, shape)
    except ValueError as exc:
        raise ShapeError(f"expand: cannot broadcast {x.shape} to {shape}") from exc
    return _result(np.ascontiguousarray(out), (x,), lambda g: (_sum_to_shape(g, x.shape),), "expand")


def concat(xs: Sequence[DiffTensor], axis: int = 0) -> DiffTensor:
    if not xs:
        raise ShapeError("concat needs at least one tensor")
    ndim = xs[0].ndim
    ax = axis % ndim
    for t in xs[1:]:
        if t.ndim != ndim or any(t.shape[i] != xs[0].shape[i] for i in range(ndim) if i != ax):
            raise ShapeError(f"concat: shape {t.shape} does not match {xs[0].shape} off axis {axis}")
    out = np.concatenate([t.data for t in xs], axis=ax)
    splits = np.cumsum([t.shape[ax] for t in xs])[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=ax))

    return _result(out, tuple(xs), backward, "concat")


def getitem(x: DiffTensor, key) -> DiffTensor:
    out = x.data[key]
    if not isinstance(out, np.ndarray):
        out = np.asarray(out, dtype=x.dtype)

    basic = _is_basic_index(key)

    def backward(g):
        full = np.zeros_like(x.data)
        if basic:
            full[key] = g
        else:
            np.add.at(full, key, g)
        return (full,)

    return _result(out, (x,), backward, "getitem")


def _is_basic_index(key) -> bool:
    items = key if isinstance(key, tuple) else (key,)
    return all(isinstance(k, (int, np.integer, slice)) or k is Ellipsis or k is None for k in items)


def embedding(weight: DiffTensor, ids) -> DiffTensor:
    """Row lookup ``weight[ids]``; gradient lands only on the rows used."""
    ids = np.asarray(ids, dtype=np.int64)
    if weight.ndim != 2:
        raise ShapeError(f"embedding table must be 2-D, got {weight.shape}")
    if ids.size and (ids.min() < 0 or ids.max() >= weight.shape[0]):
        raise IndexError(f"token id out of range for table of {weight.shape[0]} rows")
    out = weight.data[ids]

    def backward(g):
        full = np.zeros_like(weight.data)
        np.add.at(full, ids.reshape(-1), g.reshape(-1, weight.shape[1]))
        return (full,)

    return _result(out, (weight,), backward, "embedding")
