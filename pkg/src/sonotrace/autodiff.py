"""Minimal reverse-mode automatic differentiation over numpy float64 arrays.

Just enough machinery for the denoising network and the condition-fusion
block: elementwise arithmetic with broadcasting, matmul, 3-D convolution,
reductions, softmax, and a handful of activations. Gradients of every
primitive are checked against central finite differences in the test suite.
"""

from __future__ import annotations

import threading
from contextlib import contextmanager

import numpy as np

__all__ = [
    "Var",
    "no_grad",
    "add", "mul", "div", "matmul", "conv3d",
    "vsum", "vmean", "reshape", "transpose", "concat",
    "exp", "log", "sqrt", "sigmoid", "silu", "softmax",
    "finite_difference_grad",
]

_grad_enabled = True


@contextmanager
def no_grad():
    """Disable graph construction inside the block (inference mode)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Var:
    """A node in the computation graph holding a float64 ndarray."""

    __slots__ = ("value", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, value, requires_grad=False):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.value.shape

    def item(self) -> float:
        return float(self.value)

    def zero_grad(self):
        self.grad = None

    def backward(self):
        """Accumulate gradients of this (scalar) node into .grad fields."""
        if self.value.size != 1:
            raise ValueError("backward() requires a scalar output")
        order = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        self.grad = np.ones_like(self.value)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __sub__(self, other):
        return add(self, mul(other, -1.0))

    def __rsub__(self, other):
        return add(mul(self, -1.0), other)

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, p):
        return power(self, p)

    def __repr__(self):
        return f"Var(shape={self.value.shape}, requires_grad={self.requires_grad})"


def _as_var(x) -> Var:
    return x if isinstance(x, Var) else Var(x)


def _accum(node: Var, g: np.ndarray):
    # Gradients are only ever replaced (never mutated in place), so the
    # incoming array can be stored without a defensive copy.
    if node.grad is None:
        node.grad = np.asarray(g)
    else:
        node.grad = node.grad + g


def _make(value, parents, backward) -> Var:
    """Wrap a result; record the edge only if grads can flow."""
    track = _grad_enabled and any(p.requires_grad or p._parents for p in parents)
    out = Var(value)
    if track:
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Reduce a broadcasted gradient back to the operand's shape."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, s in enumerate(shape):
        if s == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g.reshape(shape)


def add(a, b) -> Var:
    a, b = _as_var(a), _as_var(b)
    out_val = a.value + b.value

    def backward(g):
        _accum(a, _unbroadcast(g, a.value.shape))
        _accum(b, _unbroadcast(g, b.value.shape))

    return _make(out_val, (a, b), backward)


def mul(a, b) -> Var:
    a, b = _as_var(a), _as_var(b)
    out_val = a.value * b.value

    def backward(g):
        _accum(a, _unbroadcast(g * b.value, a.value.shape))
        _accum(b, _unbroadcast(g * a.value, b.value.shape))

    return _make(out_val, (a, b), backward)


def div(a, b) -> Var:
    a, b = _as_var(a), _as_var(b)
    out_val = a.value / b.value

    def backward(g):
        _accum(a, _unbroadcast(g / b.value, a.value.shape))
        _accum(b, _unbroadcast(-g * a.value / (b.value * b.value), b.value.shape))

    return _make(out_val, (a, b), backward)


def power(a, p: float) -> Var:
    a = _as_var(a)
    p = float(p)
    out_val = a.value ** p

    def backward(g):
        _accum(a, g * p * a.value ** (p - 1.0))

    return _make(out_val, (a,), backward)


def matmul(a, b) -> Var:
    """np.matmul semantics; supports stacked (batched) leading dimensions."""
    a, b = _as_var(a), _as_var(b)
    out_val = a.value @ b.value

    def backward(g):
        av, bv = a.value, b.value
        ga = g @ np.swapaxes(bv, -1, -2) if bv.ndim >= 2 else np.outer(g, bv)
        gb = np.swapaxes(av, -1, -2) @ g if av.ndim >= 2 else np.outer(av, g)
        _accum(a, _unbroadcast(ga, av.shape))
        _accum(b, _unbroadcast(gb, bv.shape))

    return _make(out_val, (a, b), backward)


_conv_buffers = threading.local()


def _scratch(key, shape) -> np.ndarray:
    """Thread-local reusable work buffer; consumed before the next call of
    the same key+shape."""
    cache = getattr(_conv_buffers, "cache", None)
    if cache is None:
        cache = _conv_buffers.cache = {}
    buf = cache.get((key, shape))
    if buf is None:
        buf = cache[(key, shape)] = np.empty(shape)
    return buf


def _pad_cl(x: np.ndarray, kf: int, kh: int, kw: int) -> np.ndarray:
    return np.pad(x, ((0, 0), (kf // 2, kf // 2), (kh // 2, kh // 2),
                      (kw // 2, kw // 2), (0, 0)))


def _shift_matmul(xp: np.ndarray, w: np.ndarray, out_shape) -> np.ndarray:
    """Accumulate the convolution as 27 shifted channel matmuls.

    xp is the padded (B, F+2p, H+2p, W+2p, Cin) input; w is
    (Cout, Cin, kf, kh, kw). Avoids materializing the full im2col matrix.
    """
    _, f, h, wd = out_shape[:4]
    kf, kh, kw = w.shape[2:]
    out = np.zeros(out_shape)
    tmp = _scratch("conv-tmp", out_shape)
    for a in range(kf):
        for i in range(kh):
            for j in range(kw):
                np.matmul(xp[:, a:a + f, i:i + h, j:j + wd, :], w[:, :, a, i, j].T, out=tmp)
                np.add(out, tmp, out=out)
    return out


def _conv3d_raw(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Same-size 3-D convolution, channels last.

    x: (B, F, H, W, Cin), w: (Cout, Cin, kf, kh, kw) -> (B, F, H, W, Cout).
    """
    kf, kh, kw = w.shape[2:]
    xp = _pad_cl(x, kf, kh, kw)
    return _shift_matmul(xp, w, x.shape[:4] + (w.shape[0],))


def conv3d(x, w, b) -> Var:
    """3-D convolution with odd kernel, stride 1, zero 'same' padding.

    x: (B, F, H, W, Cin); w: (Cout, Cin, kf, kh, kw); b: (Cout,).
    """
    x, w, b = _as_var(x), _as_var(w), _as_var(b)
    co, ci, kf, kh, kw = w.value.shape
    xp = _pad_cl(x.value, kf, kh, kw)
    out_val = _shift_matmul(xp, w.value, x.value.shape[:4] + (co,)) + b.value

    def backward(g):
        # d/dx: correlate g with the flipped, channel-transposed kernel
        w_flip = np.flip(w.value, axis=(2, 3, 4)).transpose(1, 0, 2, 3, 4)
        gp = _pad_cl(g, kf, kh, kw)
        _accum(x, _shift_matmul(gp, w_flip, x.value.shape))
        # d/dw: one gathered window matrix (reusing the saved padded input)
        bsz, f, h, wd, _ = x.value.shape
        win = _scratch("conv-win", (kf * kh * kw, bsz, f, h, wd, ci))
        k = 0
        for a in range(kf):
            for i in range(kh):
                for j in range(kw):
                    win[k] = xp[:, a:a + f, i:i + h, j:j + wd, :]
                    k += 1
        gw = win.reshape(kf * kh * kw, -1, ci).transpose(0, 2, 1) @ g.reshape(-1, co)
        _accum(w, gw.reshape(kf, kh, kw, ci, co).transpose(4, 3, 0, 1, 2))
        _accum(b, g.reshape(-1, co).sum(axis=0))

    return _make(out_val, (x, w, b), backward)


def vsum(a, axis=None, keepdims=False) -> Var:
    a = _as_var(a)
    out_val = a.value.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is None:
            _accum(a, np.broadcast_to(g, a.value.shape).copy())
            return
        if not keepdims:
            g = np.expand_dims(g, axis)
        _accum(a, np.broadcast_to(g, a.value.shape).copy())

    return _make(out_val, (a,), backward)


def vmean(a, axis=None, keepdims=False) -> Var:
    a = _as_var(a)
    if axis is None:
        count = a.value.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        count = int(np.prod([a.value.shape[i] for i in axes]))
    return mul(vsum(a, axis=axis, keepdims=keepdims), 1.0 / count)


def reshape(a, shape) -> Var:
    a = _as_var(a)
    out_val = a.value.reshape(shape)

    def backward(g):
        _accum(a, g.reshape(a.value.shape))

    return _make(out_val, (a,), backward)


def transpose(a, axes) -> Var:
    a = _as_var(a)
    out_val = np.transpose(a.value, axes)
    inv = np.argsort(axes)

    def backward(g):
        _accum(a, np.transpose(g, inv))

    return _make(out_val, (a,), backward)


def concat(parts, axis=0) -> Var:
    parts = [_as_var(p) for p in parts]
    out_val = np.concatenate([p.value for p in parts], axis=axis)
    sizes = [p.value.shape[axis] for p in parts]

    def backward(g):
        offset = 0
        for p, s in zip(parts, sizes):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(offset, offset + s)
            _accum(p, g[tuple(sl)])
            offset += s

    return _make(out_val, tuple(parts), backward)


def exp(a) -> Var:
    a = _as_var(a)
    out_val = np.exp(a.value)

    def backward(g):
        _accum(a, g * out_val)

    return _make(out_val, (a,), backward)


def log(a) -> Var:
    a = _as_var(a)
    out_val = np.log(a.value)

    def backward(g):
        _accum(a, g / a.value)

    return _make(out_val, (a,), backward)


def sqrt(a) -> Var:
    a = _as_var(a)
    out_val = np.sqrt(a.value)

    def backward(g):
        _accum(a, g * 0.5 / out_val)

    return _make(out_val, (a,), backward)


def sigmoid(a) -> Var:
    a = _as_var(a)
    out_val = 1.0 / (1.0 + np.exp(-a.value))

    def backward(g):
        _accum(a, g * out_val * (1.0 - out_val))

    return _make(out_val, (a,), backward)


def silu(a) -> Var:
    """x * sigmoid(x), the smooth gate used in the denoiser blocks."""
    a = _as_var(a)
    s = 1.0 / (1.0 + np.exp(-a.value))
    out_val = a.value * s

    def backward(g):
        _accum(a, g * s * (1.0 + a.value * (1.0 - s)))

    return _make(out_val, (a,), backward)


def softmax(a, axis=-1) -> Var:
    """Stable softmax along an axis (max-shifted)."""
    a = _as_var(a)
    shifted = a.value - a.value.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out_val = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        dot = (g * out_val).sum(axis=axis, keepdims=True)
        _accum(a, out_val * (g - dot))

    return _make(out_val, (a,), backward)


def finite_difference_grad(f, x: np.ndarray, step: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of scalar f at x, elementwise."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        fp = f(x)
        flat[i] = orig - step
        fm = f(x)
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * step)
    return g
