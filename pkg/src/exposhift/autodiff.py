"""Dense float64 tensors with tape-based reverse-mode differentiation.

Every network and loss in this package is composed from the primitives in
this module, so gradient correctness is established once (against the
central finite-difference oracle in :func:`grad_check`) and inherited by
everything downstream.  Kernels are plain numpy; recording an operation
costs one closure appended to the active tape.

Values are float64 throughout.  Tensors are immutable once built; the one
sanctioned exception is the optimizer updating parameter ``data`` in place
between tapes.
"""
from __future__ import annotations

import threading
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

__all__ = [
    "ShapeError",
    "Tensor",
    "GradTape",
    "backward",
    "grad_check",
    "AdamState",
    "adam_init",
    "adam_step",
    "add",
    "sub",
    "mul",
    "div",
    "texp",
    "tlog",
    "tabs",
    "square",
    "pow_const",
    "clamp",
    "sigmoid",
    "leaky_relu",
    "reduce_sum",
    "reduce_mean",
    "softmax_flat",
    "broadcast_scalar",
    "channel_concat",
    "conv2d",
    "linear",
    "max_pool_2x2",
    "nearest_upsample_2x",
    "avg_downsample_2x",
    "pixel_shuffle",
    "pixel_unshuffle",
    "gaussian_blur",
    "gaussian_kernel",
]


class ShapeError(ValueError):
    """Operand shapes or op parameters violate an operation's contract."""


_TLS = threading.local()


def _tape_stack() -> list:
    stack = getattr(_TLS, "stack", None)
    if stack is None:
        stack = []
        _TLS.stack = stack
    return stack


def _active_tape():
    stack = _tape_stack()
    return stack[-1] if stack else None


class Tensor:
    """A dense float64 array, optionally recorded on a gradient tape."""

    __slots__ = ("data", "tape", "node")

    def __init__(self, data):
        self.data = np.asarray(data, dtype=np.float64)
        self.tape = None
        self.node = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        tag = "recorded" if self.node is not None else "const"
        return f"Tensor(shape={self.data.shape}, {tag})"

    # -- operator sugar ------------------------------------------------
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

    # -- method sugar for common unaries -------------------------------
    def exp(self):
        return texp(self)

    def log(self):
        return tlog(self)

    def abs(self):
        return tabs(self)

    def square(self):
        return square(self)

    def sigmoid(self):
        return sigmoid(self)

    def clamp(self, lo=None, hi=None):
        return clamp(self, lo, hi)

    def sum(self, axis=None):
        return reduce_sum(self, axis)

    def mean(self, axis=None):
        return reduce_mean(self, axis)


class GradTape:
    """Append-only record of operations for one reverse pass.

    Nodes are stored in execution order, so every node's parents precede
    it and a single reverse sweep propagates adjoints exactly.  A tape is
    confined to the thread that opened it; independent tapes may run
    concurrently in different threads.
    """

    def __init__(self):
        self._nodes: list[tuple[tuple, Callable | None]] = []

    def __enter__(self):
        _tape_stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        stack = _tape_stack()
        if not stack or stack[-1] is not self:
            raise RuntimeError("gradient tapes must unwind in LIFO order")
        stack.pop()
        return False

    def __len__(self):
        return len(self._nodes)

    def _append(self, parents: tuple, backward_fn: Callable | None) -> int:
        self._nodes.append((parents, backward_fn))
        return len(self._nodes) - 1

    def watch(self, tensor: Tensor) -> None:
        """Register ``tensor`` as a differentiable leaf on this tape.

        Re-watching a parameter on a fresh tape simply rebinds it; tensors
        recorded by a previous (exited) tape are treated as constants here.
        """
        if tensor.tape is self:
            return
        tensor.node = self._append((), None)
        tensor.tape = self

    def gradients(self, loss: Tensor, sources):
        """Gradient of scalar ``loss`` w.r.t. every leaf in ``sources``.

        ``sources`` may be a mapping (returns a mapping) or a sequence
        (returns a list).  Leaves that do not participate in ``loss``
        receive exact zeros.
        """
        if loss.data.ndim != 0:
            raise ShapeError(
                f"backward: loss must be a scalar, got shape {loss.data.shape}"
            )
        if loss.tape is not self or loss.node is None:
            raise ValueError("backward: loss was not recorded on this tape")

        adjoint: list = [None] * len(self._nodes)
        adjoint[loss.node] = np.ones_like(loss.data)
        for idx in range(loss.node, -1, -1):
            g = adjoint[idx]
            if g is None:
                continue
            parents, backward_fn = self._nodes[idx]
            if backward_fn is None:  # leaf
                continue
            needs = tuple(p is not None for p in parents)
            pgrads = backward_fn(g, needs)
            for p, pg in zip(parents, pgrads):
                if p is None or pg is None:
                    continue
                adjoint[p] = pg if adjoint[p] is None else adjoint[p] + pg
            adjoint[idx] = None  # free interim buffers early

        def grad_of(t: Tensor) -> np.ndarray:
            if t.tape is self and t.node is not None and adjoint[t.node] is not None:
                return np.asarray(adjoint[t.node], dtype=np.float64)
            return np.zeros_like(t.data)

        if isinstance(sources, Mapping):
            return {k: grad_of(v) for k, v in sources.items()}
        return [grad_of(t) for t in sources]


def backward(loss: Tensor, sources):
    """Convenience wrapper: gradients of ``loss`` on the tape that recorded it."""
    if loss.tape is None:
        raise ValueError("backward: loss was not recorded on any tape")
    return loss.tape.gradients(loss, sources)


def _coerce(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _record(data: np.ndarray, inputs: Sequence[Tensor], backward_fn: Callable) -> Tensor:
    out = Tensor(data)
    tape = _active_tape()
    if tape is None:
        return out
    parents = tuple(
        t.node if (t.tape is tape and t.node is not None) else None for t in inputs
    )
    if any(p is not None for p in parents):
        out.node = tape._append(parents, backward_fn)
        out.tape = tape
    return out


def _check_param(op: str, name: str, value: float) -> float:
    value = float(value)
    if not np.isfinite(value):
        raise ShapeError(f"{op}: parameter {name}={value!r} must be finite")
    return value


def _binary(op: str, a, b):
    a, b = _coerce(a), _coerce(b)
    if a.data.shape != b.data.shape and a.data.ndim != 0 and b.data.ndim != 0:
        raise ShapeError(f"{op}: incompatible shapes {a.data.shape} vs {b.data.shape}")
    return a, b


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    if grad.shape == shape:
        return grad
    # only scalar <-> array mixing is permitted, so reduce everything
    return np.asarray(grad.sum())


# ---------------------------------------------------------------------------
# elementwise primitives
# ---------------------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _binary("add", a, b)
    out = a.data + b.data

    def bwd(g, needs):
        return (
            _unbroadcast(g, a.data.shape) if needs[0] else None,
            _unbroadcast(g, b.data.shape) if needs[1] else None,
        )

    return _record(out, (a, b), bwd)


def sub(a, b) -> Tensor:
    a, b = _binary("sub", a, b)
    out = a.data - b.data

    def bwd(g, needs):
        return (
            _unbroadcast(g, a.data.shape) if needs[0] else None,
            _unbroadcast(-g, b.data.shape) if needs[1] else None,
        )

    return _record(out, (a, b), bwd)


def mul(a, b) -> Tensor:
    a, b = _binary("mul", a, b)
    ad, bd = a.data, b.data
    out = ad * bd

    def bwd(g, needs):
        return (
            _unbroadcast(g * bd, ad.shape) if needs[0] else None,
            _unbroadcast(g * ad, bd.shape) if needs[1] else None,
        )

    return _record(out, (a, b), bwd)


def div(a, b) -> Tensor:
    a, b = _binary("div", a, b)
    ad, bd = a.data, b.data
    out = ad / bd

    def bwd(g, needs):
        return (
            _unbroadcast(g / bd, ad.shape) if needs[0] else None,
            _unbroadcast(-g * ad / (bd * bd), bd.shape) if needs[1] else None,
        )

    return _record(out, (a, b), bwd)


def texp(t) -> Tensor:
    t = _coerce(t)
    e = np.exp(t.data)

    def bwd(g, needs):
        return (g * e,)

    return _record(e, (t,), bwd)


def tlog(t) -> Tensor:
    t = _coerce(t)
    if np.any(t.data <= 0.0):
        raise ShapeError("log: input must be strictly positive")
    x = t.data

    def bwd(g, needs):
        return (g / x,)

    return _record(np.log(x), (t,), bwd)


def tabs(t) -> Tensor:
    t = _coerce(t)
    x = t.data

    def bwd(g, needs):
        return (g * np.sign(x),)  # subgradient 0 at x == 0

    return _record(np.abs(x), (t,), bwd)


def square(t) -> Tensor:
    t = _coerce(t)
    x = t.data

    def bwd(g, needs):
        return (g * (2.0 * x),)

    return _record(x * x, (t,), bwd)


def pow_const(t, p: float) -> Tensor:
    """x ** p for strictly positive x (non-integer exponents allowed)."""
    t = _coerce(t)
    p = _check_param("pow_const", "p", p)
    x = t.data
    if np.any(x <= 0.0):
        raise ShapeError("pow_const: input must be strictly positive")
    out = x**p

    def bwd(g, needs):
        return (g * p * x ** (p - 1.0),)

    return _record(out, (t,), bwd)


def clamp(t, lo=None, hi=None) -> Tensor:
    t = _coerce(t)
    if lo is not None:
        lo = _check_param("clamp", "lo", lo)
    if hi is not None:
        hi = _check_param("clamp", "hi", hi)
    if lo is not None and hi is not None and lo > hi:
        raise ShapeError(f"clamp: lo={lo} exceeds hi={hi}")
    x = t.data
    out = np.clip(x, lo, hi)
    # interior-branch subgradient: pass-through at exact edge values
    mask = np.ones_like(x)
    if lo is not None:
        mask = mask * (x >= lo)
    if hi is not None:
        mask = mask * (x <= hi)

    def bwd(g, needs):
        return (g * mask,)

    return _record(out, (t,), bwd)


def sigmoid(t) -> Tensor:
    t = _coerce(t)
    x = t.data
    s = np.empty_like(x)
    pos = x >= 0
    s[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    s[~pos] = ex / (1.0 + ex)

    def bwd(g, needs):
        return (g * s * (1.0 - s),)

    return _record(s, (t,), bwd)


def leaky_relu(t, slope: float = 0.2) -> Tensor:
    t = _coerce(t)
    slope = _check_param("leaky_relu", "slope", slope)
    x = t.data
    factor = np.where(x > 0.0, 1.0, slope)

    def bwd(g, needs):
        return (g * factor,)

    return _record(x * factor, (t,), bwd)


# ---------------------------------------------------------------------------
# reductions, softmax, broadcast
# ---------------------------------------------------------------------------


def _normalize_axis(axis, ndim):
    if axis is None:
        return None
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(sorted(a % ndim for a in axis))


def reduce_sum(t, axis=None) -> Tensor:
    t = _coerce(t)
    x = t.data
    ax = _normalize_axis(axis, x.ndim)
    out = x.sum(axis=ax)

    def bwd(g, needs):
        if ax is None:
            return (np.full(x.shape, g),)
        return (np.broadcast_to(np.expand_dims(g, ax), x.shape),)

    return _record(out, (t,), bwd)


def reduce_mean(t, axis=None) -> Tensor:
    t = _coerce(t)
    x = t.data
    ax = _normalize_axis(axis, x.ndim)
    out = x.mean(axis=ax)
    count = x.size if ax is None else int(np.prod([x.shape[a] for a in ax]))

    def bwd(g, needs):
        if ax is None:
            return (np.full(x.shape, g / count),)
        return (np.broadcast_to(np.expand_dims(g / count, ax), x.shape),)

    return _record(out, (t,), bwd)


def softmax_flat(t) -> Tensor:
    """Softmax over every element, preserving the input shape."""
    t = _coerce(t)
    x = t.data
    z = np.exp(x - x.max())
    y = z / z.sum()

    def bwd(g, needs):
        dot = float((g * y).sum())
        return (y * (g - dot),)

    return _record(y, (t,), bwd)


def broadcast_scalar(t, shape) -> Tensor:
    """Fill an array of ``shape`` with a scalar tensor's value."""
    t = _coerce(t)
    if t.data.ndim != 0:
        raise ShapeError(f"broadcast_scalar: input must be scalar, got {t.data.shape}")
    out = np.full(tuple(shape), float(t.data))

    def bwd(g, needs):
        return (np.asarray(g.sum()),)

    return _record(out, (t,), bwd)


def channel_concat(tensors: Iterable) -> Tensor:
    ts = [_coerce(t) for t in tensors]
    if not ts:
        raise ShapeError("channel_concat: needs at least one input")
    trailing = ts[0].data.shape[1:]
    for t in ts:
        if t.data.ndim < 1 or t.data.shape[1:] != trailing:
            raise ShapeError(
                "channel_concat: trailing dims differ: "
                + ", ".join(str(t.data.shape) for t in ts)
            )
    out = np.concatenate([t.data for t in ts], axis=0)
    sizes = [t.data.shape[0] for t in ts]
    offsets = np.cumsum([0] + sizes)

    def bwd(g, needs):
        return tuple(
            g[offsets[i] : offsets[i + 1]] if needs[i] else None
            for i in range(len(ts))
        )

    return _record(out, tuple(ts), bwd)


# ---------------------------------------------------------------------------
# spatial primitives (channel-first images)
# ---------------------------------------------------------------------------


def conv2d(x, w, b, stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation of a (C,H,W) image with (O,C,kh,kw) kernels."""
    x, w, b = _coerce(x), _coerce(w), _coerce(b)
    xd, wd, bd = x.data, w.data, b.data
    if xd.ndim != 3 or wd.ndim != 4 or bd.ndim != 1:
        raise ShapeError(
            f"conv2d: expected image (C,H,W), kernel (O,C,kh,kw), bias (O,), "
            f"got {xd.shape}, {wd.shape}, {bd.shape}"
        )
    cout, cin, kh, kw = wd.shape
    if xd.shape[0] != cin:
        raise ShapeError(
            f"conv2d: input has {xd.shape[0]} channels, kernel expects {cin}"
        )
    if bd.shape[0] != cout:
        raise ShapeError(f"conv2d: bias {bd.shape} does not match {cout} kernels")
    if stride not in (1, 2):
        raise ShapeError(f"conv2d: stride must be 1 or 2, got {stride}")
    if padding < 0:
        raise ShapeError(f"conv2d: padding must be >= 0, got {padding}")

    xp = np.pad(xd, ((0, 0), (padding, padding), (padding, padding))) if padding else xd
    hp, wp = xp.shape[1:]
    if kh > hp or kw > wp:
        raise ShapeError(
            f"conv2d: kernel {kh}x{kw} larger than padded input {hp}x{wp}"
        )
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(1, 2))
    win = win[:, ::stride, ::stride]  # (cin, ho, wo, kh, kw), a view of xp
    ho, wo = win.shape[1], win.shape[2]
    out = np.tensordot(wd, win, axes=((1, 2, 3), (0, 3, 4))) + bd[:, None, None]

    def bwd(g, needs):
        gx = gw = gb = None
        if needs[2]:
            gb = g.sum(axis=(1, 2))
        if needs[1]:
            gw = np.tensordot(g, win, axes=((1, 2), (1, 2)))
        if needs[0]:
            t = np.tensordot(wd, g, axes=((0,), (0,)))  # (cin, kh, kw, ho, wo)
            gxp = np.zeros_like(xp)
            for i in range(kh):
                for j in range(kw):
                    gxp[:, i : i + stride * ho : stride, j : j + stride * wo : stride] += t[:, i, j]
            gx = gxp[:, padding : padding + xd.shape[1], padding : padding + xd.shape[2]] if padding else gxp
        return gx, gw, gb

    return _record(out, (x, w, b), bwd)


def linear(x, w, b) -> Tensor:
    """Matrix-vector product with bias: (m,n) @ (n,) + (m,)."""
    x, w, b = _coerce(x), _coerce(w), _coerce(b)
    xd, wd, bd = x.data, w.data, b.data
    if xd.ndim != 1 or wd.ndim != 2 or bd.ndim != 1:
        raise ShapeError(
            f"linear: expected vector (n,), weight (m,n), bias (m,), "
            f"got {xd.shape}, {wd.shape}, {bd.shape}"
        )
    if wd.shape[1] != xd.shape[0] or wd.shape[0] != bd.shape[0]:
        raise ShapeError(f"linear: shapes {wd.shape}, {xd.shape}, {bd.shape} disagree")
    out = wd @ xd + bd

    def bwd(g, needs):
        gx = wd.T @ g if needs[0] else None
        gw = np.outer(g, xd) if needs[1] else None
        gb = g if needs[2] else None
        return gx, gw, gb

    return _record(out, (x, w, b), bwd)


def max_pool_2x2(x) -> Tensor:
    """Non-overlapping 2x2 max pooling; ties go to the first site row-major."""
    x = _coerce(x)
    xd = x.data
    if xd.ndim != 3 or xd.shape[1] % 2 or xd.shape[2] % 2:
        raise ShapeError(f"max_pool_2x2: needs (C, even, even), got {xd.shape}")
    c, h, w = xd.shape
    h2, w2 = h // 2, w // 2
    blocks = xd.reshape(c, h2, 2, w2, 2).transpose(0, 1, 3, 2, 4).reshape(c, h2, w2, 4)
    idx = blocks.argmax(axis=3)  # argmax returns the first maximum
    out = np.take_along_axis(blocks, idx[..., None], axis=3)[..., 0]

    def bwd(g, needs):
        gb = np.zeros((c, h2, w2, 4))
        np.put_along_axis(gb, idx[..., None], g[..., None], axis=3)
        gx = gb.reshape(c, h2, w2, 2, 2).transpose(0, 1, 3, 2, 4).reshape(c, h, w)
        return (gx,)

    return _record(out, (x,), bwd)


def nearest_upsample_2x(x) -> Tensor:
    x = _coerce(x)
    xd = x.data
    if xd.ndim != 3:
        raise ShapeError(f"nearest_upsample_2x: needs (C,H,W), got {xd.shape}")
    c, h, w = xd.shape
    out = xd.repeat(2, axis=1).repeat(2, axis=2)

    def bwd(g, needs):
        return (g.reshape(c, h, 2, w, 2).sum(axis=(2, 4)),)

    return _record(out, (x,), bwd)


def avg_downsample_2x(x) -> Tensor:
    """2x2 block average; odd trailing rows/columns are dropped."""
    x = _coerce(x)
    xd = x.data
    if xd.ndim != 3:
        raise ShapeError(f"avg_downsample_2x: needs (C,H,W), got {xd.shape}")
    c, h, w = xd.shape
    h2, w2 = h // 2, w // 2
    if h2 < 1 or w2 < 1:
        raise ShapeError(f"avg_downsample_2x: extent {h}x{w} too small")
    xc = xd[:, : 2 * h2, : 2 * w2]
    out = xc.reshape(c, h2, 2, w2, 2).mean(axis=(2, 4))

    def bwd(g, needs):
        gx = np.zeros_like(xd)
        gx[:, : 2 * h2, : 2 * w2] = (
            (g / 4.0).repeat(2, axis=1).repeat(2, axis=2)
        )
        return (gx,)

    return _record(out, (x,), bwd)


def pixel_shuffle(x, factor: int = 2) -> Tensor:
    """Rearrange (r^2*C, H, W) into (C, r*H, r*W)."""
    x = _coerce(x)
    xd = x.data
    r = int(factor)
    if xd.ndim != 3 or r < 1:
        raise ShapeError(f"pixel_shuffle: needs (C,H,W) and factor >= 1, got {xd.shape}")
    c2, h, w = xd.shape
    if c2 % (r * r):
        raise ShapeError(f"pixel_shuffle: {c2} channels not divisible by {r * r}")
    c = c2 // (r * r)
    out = xd.reshape(c, r, r, h, w).transpose(0, 3, 1, 4, 2).reshape(c, h * r, w * r)

    def bwd(g, needs):
        return (
            g.reshape(c, h, r, w, r).transpose(0, 2, 4, 1, 3).reshape(c2, h, w),
        )

    return _record(out, (x,), bwd)


def pixel_unshuffle(x, factor: int = 2) -> Tensor:
    """Exact index-inverse of :func:`pixel_shuffle`."""
    x = _coerce(x)
    xd = x.data
    r = int(factor)
    if xd.ndim != 3 or r < 1:
        raise ShapeError(f"pixel_unshuffle: needs (C,H,W) and factor >= 1, got {xd.shape}")
    c, hr, wr = xd.shape
    if hr % r or wr % r:
        raise ShapeError(f"pixel_unshuffle: extent {hr}x{wr} not divisible by {r}")
    h, w = hr // r, wr // r
    out = xd.reshape(c, h, r, w, r).transpose(0, 2, 4, 1, 3).reshape(c * r * r, h, w)

    def bwd(g, needs):
        return (
            g.reshape(c, r, r, h, w).transpose(0, 3, 1, 4, 2).reshape(c, hr, wr),
        )

    return _record(out, (x,), bwd)


def gaussian_kernel(sigma: float, radius: int) -> np.ndarray:
    sigma = _check_param("gaussian_blur", "sigma", sigma)
    if sigma <= 0 or radius < 1:
        raise ShapeError(f"gaussian_blur: sigma {sigma} and radius {radius} must be positive")
    d = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-(d * d) / (2.0 * sigma * sigma))
    return k / k.sum()


def _corr1d_valid(a: np.ndarray, k: np.ndarray, axis: int) -> np.ndarray:
    win = np.lib.stride_tricks.sliding_window_view(a, k.size, axis=axis)
    return np.tensordot(win, k, axes=((win.ndim - 1,), (0,)))


def _corr1d_valid_adjoint(g: np.ndarray, k: np.ndarray, axis: int) -> np.ndarray:
    pad = [(0, 0)] * g.ndim
    pad[axis] = (k.size - 1, k.size - 1)
    return _corr1d_valid(np.pad(g, pad), k[::-1], axis)


def gaussian_blur(x, sigma: float = 1.5, radius: int = 5) -> Tensor:
    """Separable Gaussian filtering of a (C,H,W) image, valid extent only.

    Output spatial extent shrinks by 2*radius per side; this is the
    windowing used by the structural-similarity losses.
    """
    x = _coerce(x)
    xd = x.data
    if xd.ndim != 3:
        raise ShapeError(f"gaussian_blur: needs (C,H,W), got {xd.shape}")
    k = gaussian_kernel(sigma, radius)
    if xd.shape[1] < k.size or xd.shape[2] < k.size:
        raise ShapeError(
            f"gaussian_blur: extent {xd.shape[1]}x{xd.shape[2]} smaller than "
            f"{k.size}-tap window"
        )
    out = _corr1d_valid(_corr1d_valid(xd, k, 1), k, 2)

    def bwd(g, needs):
        return (_corr1d_valid_adjoint(_corr1d_valid_adjoint(g, k, 2), k, 1),)

    return _record(out, (x,), bwd)


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------


@dataclass
class AdamState:
    """Bias-corrected Adam moments, keyed like the parameter mapping."""

    step_count: int
    first_moment: dict
    second_moment: dict
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8


def adam_init(params: Mapping[str, Tensor], beta1=0.9, beta2=0.999, epsilon=1e-8) -> AdamState:
    return AdamState(
        step_count=0,
        first_moment={k: np.zeros_like(p.data) for k, p in params.items()},
        second_moment={k: np.zeros_like(p.data) for k, p in params.items()},
        beta1=beta1,
        beta2=beta2,
        epsilon=epsilon,
    )


def adam_step(
    params: Mapping[str, Tensor],
    grads: Mapping[str, np.ndarray],
    state: AdamState,
    learning_rate: float,
) -> None:
    """One bias-corrected Adam update, in place on ``params`` and ``state``."""
    lr = float(learning_rate)
    if not np.isfinite(lr) or lr < 0.0:
        raise ShapeError(f"adam_step: learning_rate must be >= 0, got {learning_rate}")
    state.step_count += 1
    t = state.step_count
    b1, b2, eps = state.beta1, state.beta2, state.epsilon
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    for name, p in params.items():
        g = np.asarray(grads[name], dtype=np.float64)
        if g.shape != p.data.shape:
            raise ShapeError(
                f"adam_step: gradient shape {g.shape} does not match "
                f"parameter {name!r} shape {p.data.shape}"
            )
        m = state.first_moment[name]
        v = state.second_moment[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p.data -= lr * (m / c1) / (np.sqrt(v / c2) + eps)


# ---------------------------------------------------------------------------
# finite-difference oracle
# ---------------------------------------------------------------------------


def grad_check(
    fn: Callable[..., Tensor],
    points: Sequence[np.ndarray],
    step: float = 1e-5,
    max_coords: int | None = None,
    seed: int = 0,
) -> float:
    """Max relative error of tape gradients vs central finite differences.

    ``fn`` maps one tensor per entry of ``points`` to a scalar tensor.  The
    numeric side evaluates ``fn`` on plain (unrecorded) tensors, so the two
    routes share no machinery beyond the forward kernels.  When
    ``max_coords`` is given, a seeded random subset of coordinates is
    checked per input (the big image losses would otherwise need one pair
    of evaluations per pixel).
    """
    if step <= 0:
        raise ShapeError(f"grad_check: step must be positive, got {step}")
    arrays = [np.asarray(p, dtype=np.float64) for p in points]

    with GradTape() as tape:
        tensors = [Tensor(a.copy()) for a in arrays]
        for t in tensors:
            tape.watch(t)
        out = fn(*tensors)
        if out.data.ndim != 0:
            raise ShapeError("grad_check: function must return a scalar")
        analytic = tape.gradients(out, tensors)

    def evaluate(mod_arrays) -> float:
        val = fn(*[Tensor(a) for a in mod_arrays]).data
        return float(val)

    rng = np.random.default_rng(seed)
    worst = 0.0
    for i, base in enumerate(arrays):
        n = base.size
        if max_coords is not None and n > max_coords:
            coords = np.sort(rng.choice(n, size=max_coords, replace=False))
        else:
            coords = np.arange(n)
        for c in coords:
            hi = [a.copy() for a in arrays]
            lo = [a.copy() for a in arrays]
            hi[i].flat[c] += step
            lo[i].flat[c] -= step
            f_hi = evaluate(hi)
            f_lo = evaluate(lo)
            if not (np.isfinite(f_hi) and np.isfinite(f_lo)):
                raise ArithmeticError(
                    f"grad_check: non-finite value at input {i}, coordinate {int(c)}"
                )
            numeric = (f_hi - f_lo) / (2.0 * step)
            exact = analytic[i].flat[c]
            err = abs(exact - numeric) / max(abs(exact), abs(numeric), 1e-8)
            worst = max(worst, err)
    return worst
