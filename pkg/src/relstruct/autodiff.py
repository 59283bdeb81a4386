"""Minimal reverse-mode automatic differentiation over numpy arrays.

Only the operations needed by this project are implemented.  Every op
builds an explicit graph of ``Tensor`` nodes; ``Tensor.backward`` walks it
in reverse topological order and accumulates gradients into ``.grad``.

Two numerical conventions hold throughout:

* float32 is the working precision, float64 is used when verifying
  gradients against finite differences (finite differences are too noisy
  in float32);
* reductions use numpy's fixed left-to-right semantics, so results are
  reproducible run-to-run on the same platform.

A lightweight "kink monitor" can be armed during gradient checks: every
non-smooth op (relu, hard max/min, clamps, sparsemax thresholding, arccos
clamping) reports its distance to the nearest non-differentiable point so
callers can reject inputs that sit too close to a kink.
"""

from __future__ import annotations

import math

import numpy as np

DEFAULT_DTYPE = np.float32


# ---------------------------------------------------------------------------
# kink monitoring (used by gradient checks to exclude non-smooth points)
# ---------------------------------------------------------------------------

class KinkMonitor:
    """Records the smallest distance-to-kink seen while armed."""

    def __init__(self):
        self.min_margin = math.inf

    def note(self, margin):
        if margin < self.min_margin:
            self.min_margin = float(margin)

    def __enter__(self):
        global _monitor
        self._prev = _monitor
        _monitor = self
        return self

    def __exit__(self, *exc):
        global _monitor
        _monitor = self._prev
        return False


_monitor: KinkMonitor | None = None


def _note_margin(values):
    if _monitor is not None and values.size:
        _monitor.note(np.min(values))


# ---------------------------------------------------------------------------
# core tensor
# ---------------------------------------------------------------------------

class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    # keep numpy from broadcasting elementwise over Tensor objects;
    # ndarray <op> Tensor must defer to the reflected Tensor methods
    __array_ufunc__ = None

    def __init__(self, data, requires_grad=False, dtype=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype)
        elif arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(DEFAULT_DTYPE)
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def item(self):
        return self.data.item()

    def detach(self):
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def backward(self, grad=None):
        if grad is None:
            grad = np.ones_like(self.data)
        topo = []
        seen = set()
        stack = [(self, False)]
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
                if id(p) not in seen:
                    stack.append((p, False))
        self.grad = np.asarray(grad, dtype=self.data.dtype)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # -- operator sugar ----------------------------------------------------

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
        return mul(self, -1.0)

    def __pow__(self, p):
        return power(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"


def _as_tensor(x, like=None):
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else DEFAULT_DTYPE
    return Tensor(np.asarray(x, dtype=dtype))


def _make(data, parents, backward):
    """Build a graph node; drops the tape when no parent needs gradients."""
    out = Tensor(data)
    parents = tuple(p for p in parents if isinstance(p, Tensor))
    if any(p.requires_grad or p._parents for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    return out


def _accum(t, g):
    if not (t.requires_grad or t._parents):
        return
    g = _unbroadcast(g, t.data.shape).astype(t.data.dtype, copy=False)
    if t.grad is None:
        t.grad = g if (g.flags.owndata and g.flags.writeable) else g.copy()
    else:
        t.grad = t.grad + g


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# arithmetic
# ---------------------------------------------------------------------------

def add(a, b):
    a = _as_tensor(a, b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, a)

    def backward(g):
        _accum(a, g)
        _accum(b, g)

    return _make(a.data + b.data, (a, b), backward)


def sub(a, b):
    a = _as_tensor(a, b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, a)

    def backward(g):
        _accum(a, g)
        _accum(b, -g)

    return _make(a.data - b.data, (a, b), backward)


def mul(a, b):
    a = _as_tensor(a, b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, a)

    def backward(g):
        _accum(a, g * b.data)
        _accum(b, g * a.data)

    return _make(a.data * b.data, (a, b), backward)


def div(a, b):
    a = _as_tensor(a, b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, a)

    def backward(g):
        _accum(a, g / b.data)
        _accum(b, -g * a.data / (b.data * b.data))

    return _make(a.data / b.data, (a, b), backward)


def power(a, p):
    a = _as_tensor(a)
    p = float(p)

    def backward(g):
        _accum(a, g * p * a.data ** (p - 1.0))

    return _make(a.data ** p, (a,), backward)


def matmul(a, b):
    a = _as_tensor(a)
    b = _as_tensor(b)
    out = a.data @ b.data

    def backward(g):
        if a.data.ndim == 1:
            _accum(a, g @ b.data.T if b.data.ndim > 1 else g * b.data)
        else:
            _accum(a, g @ np.swapaxes(b.data, -1, -2))
        if b.data.ndim == 1:
            _accum(b, np.swapaxes(a.data, -1, -2) @ g if a.data.ndim > 1 else a.data * g)
        else:
            gb = np.swapaxes(a.data, -1, -2) @ g
            _accum(b, gb)

    return _make(out, (a, b), backward)


# ---------------------------------------------------------------------------
# elementwise functions
# ---------------------------------------------------------------------------

def exp(a):
    a = _as_tensor(a)
    out = np.exp(a.data)

    def backward(g):
        _accum(a, g * out)

    return _make(out, (a,), backward)


def log(a):
    a = _as_tensor(a)

    def backward(g):
        _accum(a, g / a.data)

    return _make(np.log(a.data), (a,), backward)


def sqrt(a):
    a = _as_tensor(a)
    out = np.sqrt(a.data)

    def backward(g):
        _accum(a, g / (2.0 * out))

    return _make(out, (a,), backward)


def absolute(a):
    a = _as_tensor(a)
    _note_margin(np.abs(a.data))

    def backward(g):
        _accum(a, g * np.sign(a.data))

    return _make(np.abs(a.data), (a,), backward)


def sigmoid(a):
    a = _as_tensor(a)
    out = _sigmoid_np(a.data)

    def backward(g):
        _accum(a, g * out * (1.0 - out))

    return _make(out, (a,), backward)


def softplus(a):
    a = _as_tensor(a)
    out = _softplus_np(a.data)

    def backward(g):
        _accum(a, g * _sigmoid_np(a.data))

    return _make(out, (a,), backward)


def relu(a):
    a = _as_tensor(a)
    _note_margin(np.abs(a.data))
    mask = a.data > 0

    def backward(g):
        _accum(a, g * mask)

    return _make(np.where(mask, a.data, 0.0), (a,), backward)


def clamp_min(a, lo):
    """max(a, lo); gradient passes only where a > lo (subgradient at a = lo is 0)."""
    a = _as_tensor(a)
    lo = float(lo)
    _note_margin(np.abs(a.data - lo))
    mask = a.data > lo

    def backward(g):
        _accum(a, g * mask)

    return _make(np.where(mask, a.data, lo), (a,), backward)


def arccos_clamped(a, eps=1e-6):
    """arccos with the argument clamped to [-1+eps, 1-eps].

    The clamp keeps the gradient finite at degenerate geometry (coincident
    points at initialization); gradients are zero in the clamped region.
    """
    a = _as_tensor(a)
    hi = 1.0 - eps
    _note_margin(np.abs(np.abs(a.data) - hi))
    clamped = np.clip(a.data, -hi, hi)
    inside = np.abs(a.data) < hi

    def backward(g):
        _accum(a, np.where(inside, -g / np.sqrt(1.0 - clamped * clamped), 0.0))

    return _make(np.arccos(clamped), (a,), backward)


# ---------------------------------------------------------------------------
# reductions and shape ops
# ---------------------------------------------------------------------------

def sum_(a, axis=None, keepdims=False):
    a = _as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        gg = g
        if axis is not None and not keepdims:
            gg = np.expand_dims(gg, axis)
        _accum(a, np.broadcast_to(gg, a.data.shape))

    return _make(out, (a,), backward)


def mean(a, axis=None, keepdims=False):
    a = _as_tensor(a)
    n = a.data.size if axis is None else np.prod([a.data.shape[i] for i in np.atleast_1d(axis)])
    return mul(sum_(a, axis=axis, keepdims=keepdims), 1.0 / float(n))


def reduce_max_last(a):
    """Max over the last axis; gradient routed to the first argmax (row-major ties)."""
    a = _as_tensor(a)
    idx = np.argmax(a.data, axis=-1)
    out = np.take_along_axis(a.data, idx[..., None], axis=-1)[..., 0]
    if _monitor is not None and a.data.shape[-1] > 1:
        srt = np.sort(a.data, axis=-1)
        _note_margin(srt[..., -1] - srt[..., -2])

    def backward(g):
        full = np.zeros_like(a.data)
        np.put_along_axis(full, idx[..., None], g[..., None], axis=-1)
        _accum(a, full)

    return _make(out, (a,), backward)


def reduce_min_last(a):
    """Min over the last axis; gradient routed to the first argmin."""
    a = _as_tensor(a)
    idx = np.argmin(a.data, axis=-1)
    out = np.take_along_axis(a.data, idx[..., None], axis=-1)[..., 0]
    if _monitor is not None and a.data.shape[-1] > 1:
        srt = np.sort(a.data, axis=-1)
        _note_margin(srt[..., 1] - srt[..., 0])

    def backward(g):
        full = np.zeros_like(a.data)
        np.put_along_axis(full, idx[..., None], g[..., None], axis=-1)
        _accum(a, full)

    return _make(out, (a,), backward)


def reshape(a, shape):
    a = _as_tensor(a)

    def backward(g):
        _accum(a, g.reshape(a.data.shape))

    return _make(a.data.reshape(shape), (a,), backward)


def transpose(a, axes):
    a = _as_tensor(a)
    inv = np.argsort(axes)

    def backward(g):
        _accum(a, g.transpose(inv))

    return _make(a.data.transpose(axes), (a,), backward)


def concat(tensors, axis=0):
    tensors = [_as_tensor(t) for t in tensors]
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        for t, piece in zip(tensors, np.split(g, splits, axis=axis)):
            _accum(t, piece)

    return _make(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), backward)


def stack(tensors, axis=0):
    tensors = [_as_tensor(t) for t in tensors]

    def backward(g):
        for i, t in enumerate(tensors):
            _accum(t, np.take(g, i, axis=axis))

    return _make(np.stack([t.data for t in tensors], axis=axis), tuple(tensors), backward)


def take(a, indices, axis):
    """Integer-array gather along an axis; backward scatters with np.add.at."""
    a = _as_tensor(a)
    indices = np.asarray(indices)

    def backward(g):
        full = np.zeros_like(a.data)
        sl = [slice(None)] * a.data.ndim
        sl[axis] = indices
        np.add.at(full, tuple(sl), g)
        _accum(a, full)

    return _make(np.take(a.data, indices, axis=axis), (a,), backward)


def pick_rows(a, idx):
    """a[i, idx[i]] for a 2-D tensor; used to select the label logit."""
    a = _as_tensor(a)
    idx = np.asarray(idx)
    rows = np.arange(a.data.shape[0])

    def backward(g):
        full = np.zeros_like(a.data)
        np.add.at(full, (rows, idx), g)
        _accum(a, full)

    return _make(a.data[rows, idx], (a,), backward)


# ---------------------------------------------------------------------------
# normalizations
# ---------------------------------------------------------------------------

def softmax_last(a):
    """Softmax over the last axis (numerically shifted; shift is exact, not approximate)."""
    a = _as_tensor(a)
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        dot = (g * out).sum(axis=-1, keepdims=True)
        _accum(a, out * (g - dot))

    return _make(out, (a,), backward)


def log_softmax_last(a):
    a = _as_tensor(a)
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    out = shifted - lse

    def backward(g):
        soft = np.exp(out)
        _accum(a, g - soft * g.sum(axis=-1, keepdims=True))

    return _make(out, (a,), backward)


# ---------------------------------------------------------------------------
# sparsemax
# ---------------------------------------------------------------------------

def sparsemax_np(z):
    """Euclidean projection of each row of ``z`` onto the probability simplex.

    Sort-and-threshold algorithm, O(n log n) per row.  Sorting ties are
    broken by index (stable sort on the negated values) so the result is
    deterministic.  Entries below the threshold are exactly zero.
    """
    z = np.asarray(z)
    if not np.all(np.isfinite(z)):
        raise ValueError("sparsemax: input contains non-finite entries")
    squeeze = z.ndim == 1
    z2 = z[None, :] if squeeze else z
    n = z2.shape[-1]
    srt = -np.sort(-z2, axis=-1, kind="stable")
    cssv = np.cumsum(srt, axis=-1) - 1.0
    rho = np.arange(1, n + 1, dtype=z2.dtype)
    support = srt - cssv / rho > 0
    k = support.sum(axis=-1)
    tau = np.take_along_axis(cssv, (k - 1)[..., None], axis=-1) / k[..., None].astype(z2.dtype)
    out = np.maximum(z2 - tau, 0.0)
    _note_margin(np.abs(z2 - tau))
    out = out[0] if squeeze else out
    return out


def sparsemax_backward_np(z, upstream):
    """Jacobian-vector product of sparsemax at ``z`` applied to ``upstream``.

    On the support the Jacobian is I - (1/|S|) 11^T; off the support it is 0.
    """
    p = sparsemax_np(z)
    support = p > 0
    s = support.sum(axis=-1, keepdims=True) if p.ndim > 1 else support.sum()
    u = np.asarray(upstream, dtype=p.dtype)
    masked = np.where(support, u, 0.0)
    mean_u = masked.sum(axis=-1, keepdims=True) / s if p.ndim > 1 else masked.sum() / s
    return np.where(support, u - mean_u, 0.0)


def sparsemax_rows(a):
    """Row-wise sparsemax as an autodiff op (last axis)."""
    a = _as_tensor(a)
    out = sparsemax_np(a.data)
    support = out > 0
    ssize = support.sum(axis=-1, keepdims=True).astype(a.data.dtype)

    def backward(g):
        masked = np.where(support, g, 0.0)
        mean_g = masked.sum(axis=-1, keepdims=True) / ssize
        _accum(a, np.where(support, g - mean_g, 0.0))

    return _make(out, (a,), backward)


# ---------------------------------------------------------------------------
# convolution
# ---------------------------------------------------------------------------

def conv2d(x, w, b, stride=1, padding=1):
    """2-D convolution, NCHW layout, square kernel, zero padding."""
    x = _as_tensor(x)
    w = _as_tensor(w)
    b = _as_tensor(b)
    B, C, H, W = x.data.shape
    K, C2, kh, kw = w.data.shape
    if C != C2:
        raise ValueError(f"conv2d: input has {C} channels, kernel expects {C2}")
    oh = (H + 2 * padding - kh) // stride + 1
    ow = (W + 2 * padding - kw) // stride + 1
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    # cols: (B, C*kh*kw, oh*ow)
    cols = np.empty((B, C * kh * kw, oh * ow), dtype=x.data.dtype)
    i = 0
    for dy in range(kh):
        for dx in range(kw):
            patch = xp[:, :, dy:dy + stride * oh:stride, dx:dx + stride * ow:stride]
            cols[:, i * C:(i + 1) * C, :] = patch.reshape(B, C, oh * ow)
            i += 1
    wr = w.data.transpose(0, 2, 3, 1).reshape(K, kh * kw * C)
    out = (wr @ cols).reshape(B, K, oh, ow) + b.data.reshape(1, K, 1, 1)

    def backward(g):
        gf = g.reshape(B, K, oh * ow)
        _accum(b, g.sum(axis=(0, 2, 3)))
        gw = np.einsum("bkl,bcl->kc", gf, cols, optimize=True)
        _accum(w, gw.reshape(K, kh, kw, C).transpose(0, 3, 1, 2))
        gcols = np.einsum("kc,bkl->bcl", wr, gf, optimize=True)
        gxp = np.zeros_like(xp)
        i = 0
        for dy in range(kh):
            for dx in range(kw):
                gxp[:, :, dy:dy + stride * oh:stride, dx:dx + stride * ow:stride] += (
                    gcols[:, i * C:(i + 1) * C, :].reshape(B, C, oh, ow))
                i += 1
        if padding:
            gxp = gxp[:, :, padding:-padding, padding:-padding]
        _accum(x, gxp)

    return _make(out, (x, w, b), backward)


# ---------------------------------------------------------------------------
# plain numpy helpers shared by the scalar API
# ---------------------------------------------------------------------------

def _sigmoid_np(x):
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def _softplus_np(x):
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))
