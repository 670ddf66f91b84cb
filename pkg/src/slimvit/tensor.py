"""Dense tensors with reverse-mode automatic differentiation.

Covers exactly the operations a width-sliced ViT needs: matmul with stacked
leading dims, broadcast add/mul, softmax / log-softmax, layer norm, exact-erf
GELU, reshape / permute / concat, and sliced views whose backward scatter-adds
into the parent buffer. Forward is eager (numpy); each op records a backward
closure, and ``backward`` replays them in reverse creation order.

Gradients accumulate: ``backward`` increments ``.grad`` of every leaf created
with ``requires_grad=True`` and never overwrites it. Callers zero grads
explicitly between optimizer steps.
"""

from __future__ import annotations

import itertools
import math

import numpy as np
from scipy.special import erf

LOG_FLOOR = 1e-12

_ids = itertools.count()


class Tensor:
    """A dense row-major array plus its position in the autodiff tape."""

    __slots__ = ("data", "requires_grad", "grad", "_inputs", "_backward", "_id")

    def __init__(self, data, requires_grad=False, dtype=None, _inputs=(), _backward=None):
        self.data = np.asarray(data, dtype=dtype)
        self.requires_grad = requires_grad
        self.grad = None
        self._inputs = _inputs
        self._backward = _backward
        self._id = next(_ids)

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, grad={'yes' if self.grad is not None else 'no'})"

    def _tracked(self):
        return self.requires_grad or self._backward is not None

    def zero_grad(self):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        else:
            self.grad.fill(0.0)

    def detach(self):
        """Plain ndarray copy, outside the tape."""
        return self.data.copy()

    # -- operator sugar -------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, mul(other, -1.0))

    def __rsub__(self, other):
        return add(mul(self, -1.0), other)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def _as_tensor(x, like=None):
    if isinstance(x, Tensor):
        return x
    dtype = like.data.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype))


def _unbroadcast(grad, shape):
    """Reduce ``grad`` back to ``shape`` by summing broadcast axes."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, d in enumerate(shape) if d == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _make(data, inputs, backward):
    tracked = any(t._tracked() for t in inputs)
    if not tracked:
        return Tensor(data)
    return Tensor(data, _inputs=tuple(inputs), _backward=backward)


# -- arithmetic ----------------------------------------------------------


def add(a, b):
    a = _as_tensor(a)
    b = _as_tensor(b, like=a)

    def bw(g, acc):
        acc(a, _unbroadcast(g, a.data.shape))
        acc(b, _unbroadcast(g, b.data.shape))

    return _make(a.data + b.data, (a, b), bw)


def mul(a, b):
    a = _as_tensor(a)
    b = _as_tensor(b, like=a)
    ad, bd = a.data, b.data

    def bw(g, acc):
        acc(a, _unbroadcast(g * bd, ad.shape))
        acc(b, _unbroadcast(g * ad, bd.shape))

    return _make(ad * bd, (a, b), bw)


def matmul(a, b):
    """Matrix product; operands are 2-D, or stacked with equal leading dims,
    or a stacked ``a`` against a 2-D ``b`` (the shared-weight case)."""
    a = _as_tensor(a)
    b = _as_tensor(b, like=a)
    ad, bd = a.data, b.data
    if ad.ndim < 2 or bd.ndim < 2:
        raise ValueError(f"matmul needs >=2-D operands, got {ad.shape} @ {bd.shape}")
    if ad.shape[-1] != bd.shape[-2]:
        raise ValueError(f"matmul inner dims differ: {ad.shape} @ {bd.shape}")
    if bd.ndim > 2 and ad.shape[:-2] != bd.shape[:-2]:
        raise ValueError(f"matmul leading dims differ: {ad.shape} @ {bd.shape}")

    def bw(g, acc):
        acc(a, np.matmul(g, bd.swapaxes(-1, -2)))
        gb = np.matmul(ad.swapaxes(-1, -2), g)
        if bd.ndim == 2 and gb.ndim > 2:
            gb = gb.sum(axis=tuple(range(gb.ndim - 2)))
        acc(b, gb)

    return _make(np.matmul(ad, bd), (a, b), bw)


# -- shape ops -----------------------------------------------------------


def reshape(t, shape):
    t = _as_tensor(t)
    old = t.data.shape

    def bw(g, acc):
        acc(t, g.reshape(old))

    return _make(t.data.reshape(shape), (t,), bw)


def permute(t, axes):
    t = _as_tensor(t)
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))

    def bw(g, acc):
        acc(t, g.transpose(inv))

    return _make(t.data.transpose(axes).copy(), (t,), bw)


def concat(tensors, axis):
    tensors = [_as_tensor(t) for t in tensors]
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bw(g, acc):
        for t, piece in zip(tensors, np.split(g, splits, axis=axis)):
            acc(t, piece)

    return _make(np.concatenate([t.data for t in tensors], axis=axis), tensors, bw)


def broadcast_to(t, shape):
    t = _as_tensor(t)
    old = t.data.shape

    def bw(g, acc):
        acc(t, _unbroadcast(g, old))

    return _make(np.broadcast_to(t.data, shape).copy(), (t,), bw)


def slice_view(t, ranges):
    """Sub-block of ``t`` given per-axis ``(start, stop)`` ranges (None = full axis).

    Backward scatter-adds the view's gradient into the parent at the same
    indices, leaving every untouched index unchanged.
    """
    t = _as_tensor(t)
    if len(ranges) != t.data.ndim:
        raise ValueError(f"expected {t.data.ndim} ranges, got {len(ranges)}")
    idx = []
    for ax, r in enumerate(ranges):
        if r is None:
            idx.append(slice(None))
            continue
        start, stop = r
        if not (0 <= start <= stop <= t.data.shape[ax]):
            raise IndexError(f"range {r} out of bounds for axis {ax} of length {t.data.shape[ax]}")
        idx.append(slice(start, stop))
    idx = tuple(idx)

    def bw(g, acc):
        full = np.zeros_like(t.data)
        full[idx] = g
        acc(t, full)

    # Contiguous copy keeps downstream kernels bit-identical with an exported
    # standalone model holding the same values.
    return _make(t.data[idx].copy(), (t,), bw)


def sum_all(t):
    t = _as_tensor(t)
    shape = t.data.shape

    def bw(g, acc):
        acc(t, np.broadcast_to(g, shape).copy())

    return _make(t.data.sum(), (t,), bw)


# -- nonlinearities ------------------------------------------------------


def softmax(t, axis=-1):
    t = _as_tensor(t)
    shifted = t.data - t.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def bw(g, acc):
        acc(t, out * (g - (g * out).sum(axis=axis, keepdims=True)))

    return _make(out, (t,), bw)


def log_softmax(t, axis=-1):
    t = _as_tensor(t)
    shifted = t.data - t.data.max(axis=axis, keepdims=True)
    out = shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))

    def bw(g, acc):
        acc(t, g - np.exp(out) * g.sum(axis=axis, keepdims=True))

    return _make(out, (t,), bw)


def log(t):
    """Natural log with inputs floored at LOG_FLOOR; gradient is zero where floored."""
    t = _as_tensor(t)
    clamped = np.maximum(t.data, LOG_FLOOR)
    mask = t.data >= LOG_FLOOR

    def bw(g, acc):
        acc(t, np.where(mask, g / clamped, 0.0))

    return _make(np.log(clamped), (t,), bw)


def gelu(t):
    """Exact-erf GELU: x * Phi(x)."""
    t = _as_tensor(t)
    x = t.data
    phi_cdf = 0.5 * (1.0 + erf(x / math.sqrt(2.0)))

    def bw(g, acc):
        pdf = np.exp(-0.5 * x * x) / math.sqrt(2.0 * math.pi)
        acc(t, g * (phi_cdf + x * pdf))

    return _make(x * phi_cdf, (t,), bw)


def layer_norm(t, gamma, beta, eps=1e-6):
    """Normalize over the last axis to zero mean / unit variance, then affine.

    Variance is the population variance (divide by the sliced feature width).
    """
    t = _as_tensor(t)
    gamma = _as_tensor(gamma, like=t)
    beta = _as_tensor(beta, like=t)
    x = t.data
    n = x.shape[-1]
    mean = x.mean(axis=-1, keepdims=True)
    var = ((x - mean) ** 2).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x - mean) * inv

    def bw(g, acc):
        acc(gamma, _unbroadcast(g * xhat, gamma.data.shape))
        acc(beta, _unbroadcast(g, beta.data.shape))
        gx = g * gamma.data
        acc(t, inv / n * (n * gx - gx.sum(axis=-1, keepdims=True)
                          - xhat * (gx * xhat).sum(axis=-1, keepdims=True)))

    return _make(xhat * gamma.data + beta.data, (t, gamma, beta), bw)


# -- backward ------------------------------------------------------------


def backward(loss):
    """Reverse-mode sweep from a scalar loss.

    Every ``requires_grad`` leaf reachable from ``loss`` gets its ``.grad``
    incremented by d(loss)/d(leaf); running twice doubles the grads.
    """
    if loss.data.ndim != 0 and loss.data.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.data.shape}")

    nodes = []
    seen = set()
    stack = [loss]
    while stack:
        t = stack.pop()
        if id(t) in seen or not t._tracked():
            continue
        seen.add(id(t))
        nodes.append(t)
        stack.extend(t._inputs)
    nodes.sort(key=lambda t: t._id, reverse=True)

    grads = {id(loss): np.ones_like(loss.data)}

    def acc(t, g):
        if not t._tracked():
            return
        key = id(t)
        if key in grads:
            # Out-of-place: backward closures may hand the same array to
            # several inputs, so the stored buffer must never be mutated.
            grads[key] = grads[key] + g
        else:
            grads[key] = g

    for t in nodes:
        g = grads.pop(id(t), None)
        if g is None:
            continue
        if t.requires_grad:
            if t.grad is None:
                t.grad = np.zeros_like(t.data)
            t.grad += g
        if t._backward is not None:
            t._backward(g, acc)
