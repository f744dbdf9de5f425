"""Minimal reverse-mode automatic differentiation over numpy arrays.

Just enough machinery for the models in this package: broadcasting
elementwise ops, 2-D matmul, strided convolution via im2col, nearest
upsampling, log-softmax, hashed bag-of-token embedding, and a
straight-through estimator. Gradients are checked against central finite
differences in the test suite.
"""
from __future__ import annotations

import contextlib
from typing import Iterable, Sequence

import numpy as np
from scipy.special import expit

from . import kernels

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph construction inside the context (forward-only)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    """A numpy array plus an optional backward closure."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_bwd")

    def __init__(self, data, requires_grad: bool = False, _parents=(), _bwd=None):
        self.data = np.asarray(data)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._bwd = _bwd

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def backward(self) -> None:
        """Backpropagate from a scalar output; accumulates into .grad."""
        if self.data.size != 1:
            raise ValueError("backward() requires a scalar tensor")
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._bwd is None or node.grad is None:
                continue
            grads = node._bwd(node.grad)
            for parent, g in zip(node._parents, grads):
                if g is None or not parent.requires_grad:
                    continue
                if parent.grad is None:
                    parent.grad = g
                else:
                    parent.grad = parent.grad + g

    # -- operators ---------------------------------------------------------

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

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, grad={self.requires_grad})"


def astensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x))


def _pair(a, b) -> tuple[Tensor, Tensor]:
    """Coerce operands; python scalars adopt the tensor operand's dtype."""
    if isinstance(a, Tensor) and isinstance(b, (int, float)):
        return a, Tensor(np.asarray(b, dtype=a.data.dtype))
    if isinstance(b, Tensor) and isinstance(a, (int, float)):
        return Tensor(np.asarray(a, dtype=b.data.dtype)), b
    return astensor(a), astensor(b)


def _make(data, parents: Sequence[Tensor], bwd) -> Tensor:
    if _grad_enabled and any(p.requires_grad for p in parents):
        return Tensor(data, requires_grad=True, _parents=tuple(parents), _bwd=bwd)
    return Tensor(data)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce a broadcasted gradient back down to the original shape."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# -- elementwise ------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _pair(a, b)
    out = a.data + b.data
    return _make(out, (a, b), lambda g: (_unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)))


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)
    out = a.data - b.data
    return _make(out, (a, b), lambda g: (_unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)))


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)
    out = a.data * b.data
    return _make(
        out,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.data.shape), _unbroadcast(g * a.data, b.data.shape)),
    )


def div(a, b) -> Tensor:
    a, b = _pair(a, b)
    out = a.data / b.data
    return _make(
        out,
        (a, b),
        lambda g: (
            _unbroadcast(g / b.data, a.data.shape),
            _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape),
        ),
    )


def neg(a) -> Tensor:
    a = astensor(a)
    return _make(-a.data, (a,), lambda g: (-g,))


def texp(a) -> Tensor:
    a = astensor(a)
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,))


def tlog(a) -> Tensor:
    a = astensor(a)
    return _make(np.log(a.data), (a,), lambda g: (g / a.data,))


def tanh(a) -> Tensor:
    a = astensor(a)
    out = np.tanh(a.data)
    return _make(out, (a,), lambda g: (g * (1.0 - out * out),))


def sigmoid(a) -> Tensor:
    a = astensor(a)
    out = expit(a.data)
    return _make(out, (a,), lambda g: (g * out * (1.0 - out),))


def silu(a) -> Tensor:
    a = astensor(a)
    s = sigmoid(a)
    return mul(a, s)


def square(a) -> Tensor:
    a = astensor(a)
    return _make(a.data * a.data, (a,), lambda g: (g * 2.0 * a.data,))


def tsqrt(a) -> Tensor:
    a = astensor(a)
    out = np.sqrt(a.data)
    return _make(out, (a,), lambda g: (g * 0.5 / out,))


def clip(a, lo: float, hi: float) -> Tensor:
    a = astensor(a)
    out = np.clip(a.data, lo, hi)
    mask = (a.data > lo) & (a.data < hi)
    return _make(out, (a,), lambda g: (g * mask,))


def maximum_scalar(a, c: float) -> Tensor:
    """max(a, c) elementwise; gradient passes only where a > c."""
    a = astensor(a)
    out = np.maximum(a.data, c)
    mask = a.data > c
    return _make(out, (a,), lambda g: (g * mask,))


def stop_grad(a) -> Tensor:
    return Tensor(astensor(a).data)


# -- reductions and shape ops ------------------------------------------------


def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = astensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def bwd(g):
        if axis is None:
            return (np.broadcast_to(g, a.data.shape).astype(a.data.dtype, copy=False),)
        gg = g
        if not keepdims:
            gg = np.expand_dims(g, axis)
        return (np.broadcast_to(gg, a.data.shape).astype(a.data.dtype, copy=False),)

    return _make(out, (a,), bwd)


def tmean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = astensor(a)
    out = a.data.mean(axis=axis, keepdims=keepdims)
    count = a.data.size if axis is None else np.prod(
        [a.data.shape[ax] for ax in (axis if isinstance(axis, tuple) else (axis,))]
    )

    def bwd(g):
        if axis is None:
            gg = np.broadcast_to(g, a.data.shape)
        else:
            gg = g if keepdims else np.expand_dims(g, axis)
            gg = np.broadcast_to(gg, a.data.shape)
        return ((gg / count).astype(a.data.dtype, copy=False),)

    return _make(out, (a,), bwd)


def reshape(a, shape) -> Tensor:
    a = astensor(a)
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.data.shape),))


def transpose(a, axes) -> Tensor:
    a = astensor(a)
    inv = tuple(np.argsort(axes))
    return _make(a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),))


def getitem(a, idx) -> Tensor:
    a = astensor(a)
    out = a.data[idx]

    def bwd(g):
        dx = np.zeros_like(a.data)
        dx[idx] += g
        return (dx,)

    return _make(out, (a,), bwd)


def concat(parts: Iterable, axis: int = -1) -> Tensor:
    parts = [astensor(p) for p in parts]
    out = np.concatenate([p.data for p in parts], axis=axis)
    sizes = [p.data.shape[axis] for p in parts]
    splits = np.cumsum(sizes)[:-1]

    def bwd(g):
        return tuple(np.split(g, splits, axis=axis))

    return _make(out, tuple(parts), bwd)


# -- linear algebra ----------------------------------------------------------


def matmul(a, b) -> Tensor:
    a, b = astensor(a), astensor(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError("matmul supports 2-D operands only; reshape first")
    out = a.data @ b.data
    return _make(out, (a, b), lambda g: (g @ b.data.T, a.data.T @ g))


def linear(x, w, b=None) -> Tensor:
    y = matmul(x, w)
    return add(y, b) if b is not None else y


def log_softmax(a, axis: int = -1) -> Tensor:
    a = astensor(a)
    x = a.data
    m = x.max(axis=axis, keepdims=True)
    shifted = x - m
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse

    def bwd(g):
        sm = np.exp(out)
        return (g - sm * g.sum(axis=axis, keepdims=True),)

    return _make(out, (a,), bwd)


def softmax(a, axis: int = -1) -> Tensor:
    return texp(log_softmax(a, axis=axis))


# -- structured ops ----------------------------------------------------------


def conv2d(x, w, b=None, stride: int = 1, pad: int = 0) -> Tensor:
    """NHWC convolution via im2col. w: (k*k*Cin, Cout), k inferred from shape."""
    x, w = astensor(x), astensor(w)
    bt = astensor(b) if b is not None else None
    bsz, h, ww_, cin = x.data.shape
    cout = w.data.shape[1]
    k = int(round(np.sqrt(w.data.shape[0] // cin)))
    if k * k * cin != w.data.shape[0]:
        raise ValueError("conv2d weight shape inconsistent with input channels")
    if pad:
        xp = np.zeros((bsz, h + 2 * pad, ww_ + 2 * pad, cin), dtype=x.data.dtype)
        xp[:, pad : pad + h, pad : pad + ww_, :] = x.data
    else:
        xp = x.data
    cols = kernels.im2col(xp, k, stride)
    bq, oh, ow = cols.shape[0], cols.shape[1], cols.shape[2]
    cols2 = cols.reshape(bq * oh * ow, k * k * cin)
    out = cols2 @ w.data
    if bt is not None:
        out = out + bt.data
    out = out.reshape(bsz, oh, ow, cout)

    def bwd(g):
        gf = g.reshape(bq * oh * ow, cout)
        dw = cols2.T @ gf
        dcols = (gf @ w.data.T).reshape(bq, oh, ow, k, k, cin)
        dxp = kernels.col2im_add(dcols, stride, xp.shape[1], xp.shape[2])
        dx = dxp[:, pad : xp.shape[1] - pad, pad : xp.shape[2] - pad, :] if pad else dxp
        db = gf.sum(axis=0) if bt is not None else None
        return (dx, dw, db)

    parents = (x, w, bt) if bt is not None else (x, w)
    if bt is None:
        return _make(out, parents, lambda g: bwd(g)[:2])
    return _make(out, parents, bwd)


def upsample2x(x) -> Tensor:
    """Nearest-neighbour 2x upsampling on NHWC."""
    x = astensor(x)
    out = x.data.repeat(2, axis=1).repeat(2, axis=2)

    def bwd(g):
        bsz, h2, w2, c = g.shape
        return (g.reshape(bsz, h2 // 2, 2, w2 // 2, 2, c).sum(axis=(2, 4)),)

    return _make(out, (x,), bwd)


def bag_embed(table, token_ids: Sequence[np.ndarray]) -> Tensor:
    """Mean of embedding rows per sample; empty token lists map to zeros."""
    table = astensor(table)
    bsz = len(token_ids)
    dim = table.data.shape[1]
    out = np.zeros((bsz, dim), dtype=table.data.dtype)
    for i, ids in enumerate(token_ids):
        if len(ids):
            out[i] = table.data[ids].mean(axis=0)

    def bwd(g):
        dt = np.zeros_like(table.data)
        for i, ids in enumerate(token_ids):
            if len(ids):
                np.add.at(dt, ids, g[i] / len(ids))
        return (dt,)

    return _make(out, (table,), bwd)


def straight_through(hard: np.ndarray, soft) -> Tensor:
    """Forward value is exactly `hard`; gradient flows to `soft` unchanged."""
    soft = astensor(soft)
    if hard.shape != soft.data.shape:
        raise ValueError("straight_through shapes must match")
    return _make(hard.astype(soft.data.dtype, copy=False), (soft,), lambda g: (g,))
