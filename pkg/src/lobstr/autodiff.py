"""Minimal reverse-mode automatic differentiation over numpy arrays.

Operations on :class:`Tensor` objects that require gradients are recorded
on the active :class:`Tape`. ``tape.backward(loss)`` replays the records in
reverse, accumulates ``.grad`` on every leaf and clears the tape. A tape
belongs to one thread; use independent tapes for parallel work.
"""

from __future__ import annotations

import threading

import numpy as np

_state = threading.local()


class TapeError(RuntimeError):
    pass


class Tape:
    def __init__(self):
        self.nodes = []

    def __enter__(self):
        stack = getattr(_state, "stack", None)
        if stack is None:
            stack = _state.stack = []
        stack.append(self)
        return self

    def __exit__(self, *exc):
        _state.stack.pop()
        return False

    def __len__(self):
        return len(self.nodes)

    def clear(self):
        self.nodes = []

    def backward(self, loss: "Tensor"):
        if not self.nodes:
            raise TapeError("backward called without a recorded forward pass")
        if loss.size != 1:
            raise TapeError("backward needs a scalar loss")
        if loss._node is None or loss._tape is not self:
            raise TapeError("loss was not produced on this tape")
        loss.grad = np.ones_like(loss.data)
        for out, parents, fn in reversed(self.nodes):
            g = out.grad
            if g is None:
                continue
            grads = fn(g)
            for p, gp in zip(parents, grads):
                if gp is None or not p.requires_grad:
                    continue
                if p.grad is None:
                    p.grad = np.array(gp, dtype=np.float64, copy=True) if np.shape(gp) == p.shape \
                        else np.broadcast_to(gp, p.shape).copy()
                else:
                    p.grad += gp
            if out._node is not None:
                out.grad = None
        self.clear()


def _active_tape():
    stack = getattr(_state, "stack", None)
    return stack[-1] if stack else None


class Tensor:
    __array_priority__ = 100
    # make numpy defer to the reflected operators below
    __array_ufunc__ = None

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.name = name
        self._node = None
        self._tape = None

    shape = property(lambda self: self.data.shape)
    size = property(lambda self: self.data.size)
    ndim = property(lambda self: self.data.ndim)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, name={self.name!r})"

    def zero_grad(self):
        self.grad = None

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data)

    __add__ = lambda a, b: add(a, b)
    __radd__ = lambda a, b: add(b, a)
    __sub__ = lambda a, b: sub(a, b)
    __rsub__ = lambda a, b: sub(b, a)
    __mul__ = lambda a, b: mul(a, b)
    __rmul__ = lambda a, b: mul(b, a)
    __truediv__ = lambda a, b: div(a, b)
    __rtruediv__ = lambda a, b: div(b, a)
    __matmul__ = lambda a, b: matmul(a, b)
    __rmatmul__ = lambda a, b: matmul(b, a)
    __neg__ = lambda a: neg(a)
    __getitem__ = lambda a, k: getitem(a, k)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 else shape)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _record(data, parents, backward):
    out = Tensor(data)
    tape = _active_tape()
    if tape is not None and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._node = True
        out._tape = tape
        tape.nodes.append((out, parents, backward))
    return out


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    nd = g.ndim - len(shape)
    if nd > 0:
        g = g.sum(axis=tuple(range(nd)))
    axes = tuple(k for k, s in enumerate(shape) if s == 1 and g.shape[k] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# -- elementwise ----------------------------------------------------------

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _record(a.data + b.data, (a, b),
                   lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _record(a.data - b.data, (a, b),
                   lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _record(a.data * b.data, (a, b),
                   lambda g: (_unbroadcast(g * b.data, a.shape) if a.requires_grad else None,
                              _unbroadcast(g * a.data, b.shape) if b.requires_grad else None))


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data
    return _record(out, (a, b),
                   lambda g: (_unbroadcast(g / b.data, a.shape) if a.requires_grad else None,
                              _unbroadcast(-g * out / b.data, b.shape) if b.requires_grad else None))


def neg(a):
    return _record(-a.data, (a,), lambda g: (-g,))


def sigmoid(a):
    a = as_tensor(a)
    s = 0.5 * (np.tanh(0.5 * a.data) + 1.0)
    return _record(s, (a,), lambda g: (g * s * (1.0 - s),))


def tanh(a):
    a = as_tensor(a)
    t = np.tanh(a.data)
    return _record(t, (a,), lambda g: (g * (1.0 - t * t),))


def relu(a):
    a = as_tensor(a)
    mask = a.data > 0
    return _record(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,))


def tabs(a):
    a = as_tensor(a)
    return _record(np.abs(a.data), (a,), lambda g: (g * np.sign(a.data),))


def sqrt(a):
    a = as_tensor(a)
    r = np.sqrt(a.data)
    return _record(r, (a,), lambda g: (np.where(r > 0, g / (2.0 * np.where(r > 0, r, 1.0)), 0.0),))


def exp(a):
    a = as_tensor(a)
    e = np.exp(a.data)
    return _record(e, (a,), lambda g: (g * e,))


def log(a):
    a = as_tensor(a)
    return _record(np.log(a.data), (a,), lambda g: (g / a.data,))


# -- linear algebra / reductions -------------------------------------------

def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def back(g):
        ga = gb = None
        if a.requires_grad:
            if b.ndim == 1:
                ga = np.multiply.outer(g, b.data) if a.ndim > 1 else g * b.data
            else:
                ga = g @ np.swapaxes(b.data, -1, -2)
            ga = _unbroadcast(ga, a.shape) if ga.shape != a.shape else ga
        if b.requires_grad:
            if a.ndim == 1:
                gb = np.multiply.outer(a.data, g)
            elif b.ndim == 1:
                gb = (np.swapaxes(a.data, -1, -2) @ g[..., None])[..., 0]
                gb = gb.reshape(-1, gb.shape[-1]).sum(0) if gb.ndim > 1 else gb
            else:
                gb = np.swapaxes(a.data, -1, -2) @ g
            gb = _unbroadcast(gb, b.shape) if gb.shape != b.shape else gb
        return ga, gb
    return _record(a.data @ b.data, (a, b), back)


def tsum(a, axis=None, keepdims=False):
    a = as_tensor(a)

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape),)
    return _record(np.sum(a.data, axis=axis, keepdims=keepdims), (a,), back)


def mean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    n = a.size if axis is None else np.prod([a.shape[k] for k in np.atleast_1d(axis)])
    return mul(tsum(a, axis, keepdims), 1.0 / n)


def reshape(a, shape):
    a = as_tensor(a)
    return _record(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def swapaxes(a, i, j):
    a = as_tensor(a)
    return _record(np.swapaxes(a.data, i, j), (a,), lambda g: (np.swapaxes(g, i, j),))


def getitem(a, key):
    a = as_tensor(a)

    def back(g):
        full = np.zeros(a.shape)
        np.add.at(full, key, g) if _fancy(key) else full.__setitem__(key, g)
        return (full,)
    return _record(a.data[key], (a,), back)


def _fancy(key):
    keys = key if isinstance(key, tuple) else (key,)
    return any(isinstance(k, (list, np.ndarray)) for k in keys)


def concat(ts, axis=0):
    ts = [as_tensor(t) for t in ts]
    sizes = np.cumsum([t.shape[axis] for t in ts])[:-1]

    def back(g):
        return tuple(np.split(g, sizes, axis=axis))
    return _record(np.concatenate([t.data for t in ts], axis=axis), tuple(ts), back)


def stack(ts, axis=0):
    ts = [as_tensor(t) for t in ts]

    def back(g):
        return tuple(np.moveaxis(g, axis, 0))
    return _record(np.stack([t.data for t in ts], axis=axis), tuple(ts), back)


def cross(a, b):
    """Cross product over the last axis."""
    a, b = as_tensor(a), as_tensor(b)
    return _record(np.cross(a.data, b.data), (a, b),
                   lambda g: (_unbroadcast(np.cross(b.data, g), a.shape),
                              _unbroadcast(np.cross(g, a.data), b.shape)))


def norm(a, axis=-1, keepdims=False):
    """Euclidean norm with zero subgradient at the origin."""
    a = as_tensor(a)
    n = np.sqrt(np.sum(a.data * a.data, axis=axis, keepdims=True))

    def back(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        safe = np.where(n > 0, n, 1.0)
        return (np.where(n > 0, g * a.data / safe, 0.0),)
    return _record(n if keepdims else np.squeeze(n, axis), (a,), back)


def log_softmax(a, axis=-1):
    a = as_tensor(a)
    m = np.max(a.data, axis=axis, keepdims=True)
    z = a.data - m
    lse = np.log(np.sum(np.exp(z), axis=axis, keepdims=True))
    out = z - lse
    sm = np.exp(out)
    return _record(out, (a,), lambda g: (g - sm * np.sum(g, axis=axis, keepdims=True),))


def softmax_np(x, axis=-1):
    z = np.asarray(x, dtype=np.float64)
    z = z - np.max(z, axis=axis, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=axis, keepdims=True)
