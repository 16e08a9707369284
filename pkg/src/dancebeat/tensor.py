"""Dense float64 tensors with tape-based reverse-mode differentiation.

Everything learnable in the pipeline runs on this module. Arrays are
row-major numpy float64 throughout; a Tape records each differentiable
operation so that unwinding it in reverse propagates adjoints back to
every leaf with requires_grad set.

Forward evaluation on distinct tensors is safe to parallelize; a Tape is
single-owner and must never be built or unwound from two threads.
"""
from __future__ import annotations

import math

import numpy as np

from .errors import ConfigError, ContractError, ShapeError

_TAPE_STACK: list["Tape"] = []


class Tape:
    """Ordered record of executed operations for reverse-mode replay."""

    def __init__(self):
        self._records: list[tuple["Tensor", object]] = []

    def __enter__(self) -> "Tape":
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        _TAPE_STACK.pop()
        return False

    def record(self, out: "Tensor", backward_fn) -> None:
        self._records.append((out, backward_fn))

    def reset(self) -> None:
        self._records.clear()

    def __len__(self) -> int:
        return len(self._records)


def _active_tape() -> Tape | None:
    return _TAPE_STACK[-1] if _TAPE_STACK else None


class Tensor:
    """A contiguous float64 array plus an optional gradient buffer."""

    __slots__ = ("data", "requires_grad", "grad", "_tape")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        self.data = arr if arr.flags["C_CONTIGUOUS"] else np.ascontiguousarray(arr)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._tape: Tape | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def _accum(self, g: np.ndarray) -> None:
        if not self.requires_grad:
            return
        g = _unbroadcast(g, self.data.shape)
        if self.grad is None:
            self.grad = g.copy()
        else:
            self.grad += g

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return tslice(self, key)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Reduce a broadcast gradient back to the operand's shape."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g.reshape(shape)


def _emit(out_data: np.ndarray, inputs: tuple[Tensor, ...], backward_fn) -> Tensor:
    tape = _active_tape()
    needs = tape is not None and any(t.requires_grad for t in inputs)
    out = Tensor(out_data, requires_grad=needs)
    if needs:
        out._tape = tape
        tape.record(out, backward_fn)
    return out


# ---------------------------------------------------------------------------
# elementwise arithmetic


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bwd(g):
        a._accum(g)
        b._accum(g)

    return _emit(a.data + b.data, (a, b), bwd)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bwd(g):
        a._accum(g)
        b._accum(-g)

    return _emit(a.data - b.data, (a, b), bwd)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bwd(g):
        a._accum(g * b.data)
        b._accum(g * a.data)

    return _emit(a.data * b.data, (a, b), bwd)


def neg(a) -> Tensor:
    a = as_tensor(a)

    def bwd(g):
        a._accum(-g)

    return _emit(-a.data, (a,), bwd)


def exp(a) -> Tensor:
    a = as_tensor(a)
    y = np.exp(a.data)

    def bwd(g):
        a._accum(g * y)

    return _emit(y, (a,), bwd)


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    y = np.sqrt(a.data)

    def bwd(g):
        a._accum(g * 0.5 / y)

    return _emit(y, (a,), bwd)


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    y = np.empty_like(a.data)
    pos = a.data >= 0
    y[pos] = 1.0 / (1.0 + np.exp(-a.data[pos]))
    ez = np.exp(a.data[~pos])
    y[~pos] = ez / (1.0 + ez)

    def bwd(g):
        a._accum(g * y * (1.0 - y))

    return _emit(y, (a,), bwd)


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0

    def bwd(g):
        a._accum(g * mask)

    return _emit(a.data * mask, (a,), bwd)


# ---------------------------------------------------------------------------
# linear algebra and shape ops


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")

    def bwd(g):
        a._accum(g @ b.data.T)
        b._accum(a.data.T @ g)

    return _emit(a.data @ b.data, (a, b), bwd)


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inv = np.argsort(axes)

    def bwd(g):
        a._accum(g.transpose(inv))

    return _emit(a.data.transpose(axes), (a,), bwd)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    old = a.data.shape

    def bwd(g):
        a._accum(g.reshape(old))

    return _emit(a.data.reshape(shape), (a,), bwd)


def concat(parts, axis: int = 0) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    sizes = [p.data.shape[axis] for p in parts]
    splits = np.cumsum(sizes)[:-1]

    def bwd(g):
        for p, gp in zip(parts, np.split(g, splits, axis=axis)):
            p._accum(gp)

    return _emit(np.concatenate([p.data for p in parts], axis=axis), tuple(parts), bwd)


def tslice(a, key) -> Tensor:
    a = as_tensor(a)

    def bwd(g):
        if a.requires_grad:
            buf = np.zeros_like(a.data)
            buf[key] = g
            a._accum(buf)

    return _emit(a.data[key].copy(), (a,), bwd)


def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    shape = a.data.shape

    def bwd(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        a._accum(np.broadcast_to(g, shape))

    return _emit(a.data.sum(axis=axis, keepdims=keepdims), (a,), bwd)


def tmean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    shape = a.data.shape
    n = a.data.size if axis is None else shape[axis]

    def bwd(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        a._accum(np.broadcast_to(g, shape) / n)

    return _emit(a.data.mean(axis=axis, keepdims=keepdims), (a,), bwd)


def softmax(a, axis: int = -1) -> Tensor:
    """Numerically stable softmax; rows sum to 1 along `axis`."""
    a = as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)

    def bwd(g):
        dot = (g * y).sum(axis=axis, keepdims=True)
        a._accum(y * (g - dot))

    return _emit(y, (a,), bwd)


def layer_norm(a, eps: float = 1e-5) -> Tensor:
    """Normalize along the last axis to zero mean / unit variance."""
    a = as_tensor(a)
    mu = a.data.mean(axis=-1, keepdims=True)
    var = a.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (a.data - mu) * inv

    def bwd(g):
        gm = g.mean(axis=-1, keepdims=True)
        gx = (g * xhat).mean(axis=-1, keepdims=True)
        a._accum((g - gm - xhat * gx) * inv)

    return _emit(xhat, (a,), bwd)


# ---------------------------------------------------------------------------
# 1D convolution with reflect padding


def reflect_indices(n: int, pad: int) -> np.ndarray:
    """Source indices for reflect-padding a length-n signal by `pad` a side.

    Handles pads wider than the signal by repeated reflection.
    """
    if n == 1:
        return np.zeros(1 + 2 * pad, dtype=np.intp)
    pos = np.arange(-pad, n + pad)
    period = 2 * (n - 1)
    q = np.mod(pos, period)
    return np.where(q < n, q, period - q).astype(np.intp)


def conv1d_same(signal, kernel) -> Tensor:
    """Cross-correlate a 1-D signal with an odd-length kernel, reflect-padded
    so the output length equals the input length.

    Adjoints are recorded for the signal path only; the kernel is treated
    as a constant.
    """
    sig = as_tensor(signal)
    k = kernel.data if isinstance(kernel, Tensor) else np.asarray(kernel, dtype=np.float64)
    if sig.ndim != 1 or k.ndim != 1:
        raise ShapeError(f"conv1d_same expects 1-D operands, got {sig.shape} and {k.shape}")
    L = k.size
    if L % 2 == 0:
        raise ConfigError(f"conv1d_same kernel length must be odd, got {L}")
    T = sig.data.size
    pad = L // 2
    idx = reflect_indices(T, pad)
    padded = sig.data[idx]
    out = np.correlate(padded, k, mode="valid")

    def bwd(g):
        if sig.requires_grad:
            gpad = np.convolve(g, k, mode="full")
            gsig = np.zeros(T)
            np.add.at(gsig, idx, gpad)
            sig._accum(gsig)

    return _emit(out, (sig,), bwd)


# ---------------------------------------------------------------------------
# backward pass


def backward(loss: Tensor) -> None:
    """Populate gradients for every requires_grad leaf reachable from `loss`.

    Repeated calls without zeroing accumulate, matching the usual
    reverse-mode convention.
    """
    if loss.data.size != 1:
        raise ContractError(f"backward expects a scalar loss, got shape {loss.shape}")
    tape = loss._tape
    if tape is None:
        # loss does not depend on anything recorded; nothing to do
        return
    # intermediates start each pass fresh; only leaf gradients accumulate
    for out, _ in tape._records:
        out.grad = None
    loss._accum(np.ones_like(loss.data))
    for out, fn in reversed(tape._records):
        if out.grad is not None:
            fn(out.grad)


# ---------------------------------------------------------------------------
# parameter helpers


def init_uniform(rng: np.random.Generator, shape, fan_in: int) -> Tensor:
    a = 1.0 / math.sqrt(fan_in)
    return Tensor(rng.uniform(-a, a, size=shape), requires_grad=True)


def zeros(shape) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=True)


def linear(x, w, b=None) -> Tensor:
    y = matmul(x, w)
    return y if b is None else add(y, b)


def sinusoidal_embedding(positions, dim: int) -> np.ndarray:
    """Fixed sine/cosine embedding; one row per position, `dim` columns."""
    pos = np.atleast_1d(np.asarray(positions, dtype=np.float64))
    half = dim // 2
    freqs = np.exp(-math.log(10000.0) * np.arange(half) / max(half, 1))
    args = pos[:, None] * freqs[None, :]
    emb = np.concatenate([np.sin(args), np.cos(args)], axis=1)
    if emb.shape[1] < dim:
        emb = np.concatenate([emb, np.zeros((emb.shape[0], dim - emb.shape[1]))], axis=1)
    return emb


def finite_difference(f, x: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    """Central finite-difference gradient of scalar f at x (test oracle)."""
    g = np.zeros_like(x, dtype=np.float64)
    it = np.nditer(x, flags=["multi_index"])
    while not it.finished:
        i = it.multi_index
        orig = x[i]
        x[i] = orig + eps
        fp = f()
        x[i] = orig - eps
        fm = f()
        x[i] = orig
        g[i] = (fp - fm) / (2 * eps)
        it.iternext()
    return g
