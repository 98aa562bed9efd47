"""Reverse-mode autodiff over dense float64 numpy arrays.

A Tensor wraps an ndarray and, while gradient mode is on, records enough
of the computation graph to backpropagate.  Targets and action selection
run inside `no_grad()` so they build no graph at all, which both speeds
up the hot loop and guarantees exactly-zero gradients on that side.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "Tensor",
    "no_grad",
    "is_grad_enabled",
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "matmul",
    "linear",
    "relu",
    "tanh",
    "exp",
    "log",
    "sqrt",
    "softplus",
    "log_softmax",
    "clip",
    "clamp_min",
    "minimum",
    "tsum",
    "tmean",
    "reshape",
    "transpose",
    "narrow",
    "concat",
    "backward",
]

_GRAD_ENABLED = True

LOG2 = float(np.log(2.0))


class no_grad:
    """Context manager that disables graph recording."""

    def __enter__(self):
        global _GRAD_ENABLED
        self._prev = _GRAD_ENABLED
        _GRAD_ENABLED = False
        return self

    def __exit__(self, *exc):
        global _GRAD_ENABLED
        _GRAD_ENABLED = self._prev
        return False


def is_grad_enabled() -> bool:
    return _GRAD_ENABLED


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_done")

    # keep numpy from absorbing Tensors into object arrays; ndarray <op> Tensor
    # then defers to our reflected operators
    __array_ufunc__ = None

    def __init__(self, data, requires_grad: bool = False):
        if isinstance(data, Tensor):
            data = data.data
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad = None
        self._parents = ()
        self._backward = None
        self._done = False

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        # shares the underlying array; cheap stop-gradient
        return Tensor(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def backward(self):
        backward(self)

    # --- operators ----------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return add(neg(self), other)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, p):
        return tpow(self, p)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, grad={self.requires_grad})"


def _as_array(x):
    if isinstance(x, Tensor):
        return x.data
    return np.asarray(x, dtype=np.float64)


def _node(data, parents, backward_fn):
    """Create a graph node only when some parent needs gradients."""
    out = Tensor(data)
    if _GRAD_ENABLED:
        tracked = tuple(p for p in parents if isinstance(p, Tensor) and p.requires_grad)
        if tracked:
            out.requires_grad = True
            out._parents = tracked
            out._backward = backward_fn
    return out


def _accum(t: Tensor, g: np.ndarray, owned: bool = False):
    if t.grad is None:
        t.grad = g if owned else g.copy()
    else:
        t.grad += g


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Sum gradient over axes that were broadcast in the forward pass."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gd, sd) in enumerate(zip(g.shape, shape)) if sd == 1 and gd != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# --- arithmetic -------------------------------------------------------


def add(a, b):
    av, bv = _as_array(a), _as_array(b)
    out_data = av + bv

    def bw(out):
        g = out.grad
        if isinstance(a, Tensor) and a.requires_grad:
            ga = _unbroadcast(g, av.shape)
            _accum(a, ga, owned=ga is not g)
        if isinstance(b, Tensor) and b.requires_grad:
            gb = _unbroadcast(g, bv.shape)
            _accum(b, gb, owned=gb is not g)

    return _node(out_data, (a, b), bw)


def sub(a, b):
    av, bv = _as_array(a), _as_array(b)
    out_data = av - bv

    def bw(out):
        g = out.grad
        if isinstance(a, Tensor) and a.requires_grad:
            ga = _unbroadcast(g, av.shape)
            _accum(a, ga, owned=ga is not g)
        if isinstance(b, Tensor) and b.requires_grad:
            _accum(b, _unbroadcast(-g, bv.shape), owned=True)

    return _node(out_data, (a, b), bw)


def mul(a, b):
    av, bv = _as_array(a), _as_array(b)
    out_data = av * bv

    def bw(out):
        g = out.grad
        if isinstance(a, Tensor) and a.requires_grad:
            _accum(a, _unbroadcast(g * bv, av.shape), owned=True)
        if isinstance(b, Tensor) and b.requires_grad:
            _accum(b, _unbroadcast(g * av, bv.shape), owned=True)

    return _node(out_data, (a, b), bw)


def div(a, b):
    av, bv = _as_array(a), _as_array(b)
    out_data = av / bv

    def bw(out):
        g = out.grad
        if isinstance(a, Tensor) and a.requires_grad:
            _accum(a, _unbroadcast(g / bv, av.shape), owned=True)
        if isinstance(b, Tensor) and b.requires_grad:
            _accum(b, _unbroadcast(-g * av / (bv * bv), bv.shape), owned=True)

    return _node(out_data, (a, b), bw)


def neg(a):
    av = _as_array(a)

    def bw(out):
        if isinstance(a, Tensor) and a.requires_grad:
            _accum(a, -out.grad, owned=True)

    return _node(-av, (a,), bw)


def tpow(a, p: float):
    av = _as_array(a)
    out_data = av**p

    def bw(out):
        if isinstance(a, Tensor) and a.requires_grad:
            _accum(a, out.grad * p * av ** (p - 1), owned=True)

    return _node(out_data, (a,), bw)


def matmul(a, b):
    av, bv = _as_array(a), _as_array(b)
    out_data = av @ bv

    def bw(out):
        g = out.grad
        if isinstance(a, Tensor) and a.requires_grad:
            _accum(a, g @ bv.T, owned=True)
        if isinstance(b, Tensor) and b.requires_grad:
            _accum(b, av.T @ g, owned=True)

    return _node(out_data, (a, b), bw)


def linear(x, w, b):
    """Fused x @ w + b for 2-D x; single graph node keeps the tape short."""
    xv, wv, bv = _as_array(x), _as_array(w), _as_array(b)
    out_data = xv @ wv + bv

    def bw(out):
        g = out.grad
        if isinstance(x, Tensor) and x.requires_grad:
            _accum(x, g @ wv.T, owned=True)
        if isinstance(w, Tensor) and w.requires_grad:
            _accum(w, xv.T @ g, owned=True)
        if isinstance(b, Tensor) and b.requires_grad:
            _accum(b, g.sum(axis=0), owned=True)

    return _node(out_data, (x, w, b), bw)


# --- nonlinearities ---------------------------------------------------


def relu(a):
    av = _as_array(a)
    out_data = np.maximum(av, 0.0)

    def bw(out):
        if isinstance(a, Tensor) and a.requires_grad:
            _accum(a, out.grad * (av > 0.0), owned=True)

    return _node(out_data, (a,), bw)


def tanh(a):
    av = _as_array(a)
    out_data = np.tanh(av)

    def bw(out):
        if isinstance(a, Tensor) and a.requires_grad:
            _accum(a, out.grad * (1.0 - out_data * out_data), owned=True)

    return _node(out_data, (a,), bw)


def exp(a):
    av = _as_array(a)
    out_data = np.exp(av)

    def bw(out):
        if isinstance(a, Tensor) and a.requires_grad:
            _accum(a, out.grad * out_data, owned=True)

    return _node(out_data, (a,), bw)


def log(a):
    av = _as_array(a)
    out_data = np.log(av)

    def bw(out):
        if isinstance(a, Tensor) and a.requires_grad:
            _accum(a, out.grad / av, owned=True)

    return _node(out_data, (a,), bw)


def sqrt(a):
    av = _as_array(a)
    out_data = np.sqrt(av)

    def bw(out):
        if isinstance(a, Tensor) and a.requires_grad:
            _accum(a, out.grad * 0.5 / out_data, owned=True)

    return _node(out_data, (a,), bw)


def softplus(a):
    """log(1 + e^x), computed stably for large |x|."""
    av = _as_array(a)
    out_data = np.maximum(av, 0.0) + np.log1p(np.exp(-np.abs(av)))

    def bw(out):
        if isinstance(a, Tensor) and a.requires_grad:
            sig = 1.0 / (1.0 + np.exp(-av))
            _accum(a, out.grad * sig, owned=True)

    return _node(out_data, (a,), bw)


def log_softmax(a, axis: int = -1):
    av = _as_array(a)
    shifted = av - av.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out_data = shifted - lse

    def bw(out):
        if isinstance(a, Tensor) and a.requires_grad:
            g = out.grad
            sm = np.exp(out_data)
            _accum(a, g - sm * g.sum(axis=axis, keepdims=True), owned=True)

    return _node(out_data, (a,), bw)


def clip(a, lo: float, hi: float):
    """Clamp; zero gradient outside [lo, hi]."""
    av = _as_array(a)
    out_data = np.clip(av, lo, hi)

    def bw(out):
        if isinstance(a, Tensor) and a.requires_grad:
            _accum(a, out.grad * ((av >= lo) & (av <= hi)), owned=True)

    return _node(out_data, (a,), bw)


def clamp_min(a, lo: float):
    av = _as_array(a)
    out_data = np.maximum(av, lo)

    def bw(out):
        if isinstance(a, Tensor) and a.requires_grad:
            _accum(a, out.grad * (av >= lo), owned=True)

    return _node(out_data, (a,), bw)


def minimum(a, b):
    """Elementwise min of two tensors; ties route gradient to the first."""
    av, bv = _as_array(a), _as_array(b)
    take_a = av <= bv
    out_data = np.where(take_a, av, bv)

    def bw(out):
        g = out.grad
        if isinstance(a, Tensor) and a.requires_grad:
            _accum(a, _unbroadcast(g * take_a, av.shape), owned=True)
        if isinstance(b, Tensor) and b.requires_grad:
            _accum(b, _unbroadcast(g * ~take_a, bv.shape), owned=True)

    return _node(out_data, (a, b), bw)


# --- reductions and shape ---------------------------------------------


def tsum(a, axis=None, keepdims=False):
    av = _as_array(a)
    out_data = av.sum(axis=axis, keepdims=keepdims)

    def bw(out):
        if isinstance(a, Tensor) and a.requires_grad:
            g = out.grad
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            _accum(a, np.broadcast_to(g, av.shape).copy(), owned=True)

    return _node(out_data, (a,), bw)


def tmean(a, axis=None, keepdims=False):
    av = _as_array(a)
    out_data = av.mean(axis=axis, keepdims=keepdims)
    denom = av.size if axis is None else av.shape[axis]

    def bw(out):
        if isinstance(a, Tensor) and a.requires_grad:
            g = out.grad
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            _accum(a, np.broadcast_to(g, av.shape) / denom, owned=True)

    return _node(out_data, (a,), bw)


def reshape(a, shape):
    av = _as_array(a)
    out_data = av.reshape(shape)

    def bw(out):
        if isinstance(a, Tensor) and a.requires_grad:
            _accum(a, out.grad.reshape(av.shape))

    return _node(out_data, (a,), bw)


def transpose(a, axes):
    av = _as_array(a)
    out_data = np.transpose(av, axes)
    inverse = np.argsort(axes)

    def bw(out):
        if isinstance(a, Tensor) and a.requires_grad:
            _accum(a, np.transpose(out.grad, inverse).copy(), owned=True)

    return _node(out_data, (a,), bw)


def narrow(a, axis: int, start: int, length: int):
    """Contiguous slice along one axis."""
    av = _as_array(a)
    idx = [slice(None)] * av.ndim
    idx[axis] = slice(start, start + length)
    idx = tuple(idx)
    out_data = av[idx]

    def bw(out):
        if isinstance(a, Tensor) and a.requires_grad:
            g = np.zeros_like(av)
            g[idx] = out.grad
            _accum(a, g, owned=True)

    return _node(out_data, (a,), bw)


def concat(tensors, axis: int = -1):
    arrays = [_as_array(t) for t in tensors]
    out_data = np.concatenate(arrays, axis=axis)
    sizes = [arr.shape[axis] for arr in arrays]
    offsets = np.cumsum([0] + sizes)

    def bw(out):
        g = out.grad
        for t, start, end in zip(tensors, offsets[:-1], offsets[1:]):
            if isinstance(t, Tensor) and t.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(start, end)
                _accum(t, g[tuple(idx)])

    return _node(out_data, tuple(tensors), bw)


# --- backward pass ----------------------------------------------------


def backward(loss: Tensor):
    """Backpropagate from a scalar loss; each graph may be consumed once."""
    if loss.size != 1:
        raise ValueError(f"backward requires a scalar loss, got shape {loss.shape}")
    if loss._done:
        raise RuntimeError("backward called twice on the same graph; rerun the forward pass")
    loss._done = True
    if not loss.requires_grad:
        return

    # iterative post-order topological sort
    topo: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in visited:
                stack.append((parent, False))

    loss.grad = np.ones_like(loss.data)
    for node in reversed(topo):
        if node._backward is not None:
            node._backward(node)
    # release intermediate state so leaf grads are all that survives
    for node in topo:
        if node._backward is not None:
            node.grad = None
            node._parents = ()
            node._backward = None
