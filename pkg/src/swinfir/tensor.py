"""Dense tensors with reverse-mode automatic differentiation.

Every differentiable operation builds a new :class:`Tensor` that keeps a
reference to its parents and a closure mapping the output gradient to the
parent gradients. :func:`backward` orders the graph reachable from a scalar
loss into a :class:`Tape` (parents before children) and walks it in reverse.

Canonical image layout is ``N x C x H x W``. Precision follows the data:
float32 for training and float64 for gradient checks. No op changes dtype.
"""
from __future__ import annotations

import math
import threading
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.special import erf

from .errors import NumericError, ShapeError

_state = threading.local()


def grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


@contextmanager
def no_grad():
    """Disable graph recording in the current thread."""
    prev = grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


class Tensor:
    """An n-d float array that may take part in gradient computation."""

    __array_priority__ = 100  # make ndarray <op> Tensor defer to Tensor

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data)
        if dtype is None:
            dtype = arr.dtype if arr.dtype in (np.float32, np.float64) else np.float64
        self.data: np.ndarray = np.ascontiguousarray(arr, dtype=dtype)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None
        self.op = "leaf"

    # -- basic properties -------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return not self._parents

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(()))

    def detach(self) -> Tensor:
        return Tensor(self.data, dtype=self.dtype)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, op={self.op}, requires_grad={self.requires_grad})"

    def backward(self) -> dict:
        return backward(self)

    # -- operators ---------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return add(neg(self), other)

    def __neg__(self):
        return neg(self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("division is only supported by a python scalar")
        return mul(self, 1.0 / other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes)

    def sum(self, axis=None):
        return tsum(self, axis)

    def mean(self):
        return mean(self)


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x, dtype=dtype)


def record(out: np.ndarray, parents: Sequence[Tensor], backward_fn, op: str) -> Tensor:
    """Wrap ``out`` as the result of a differentiable op on ``parents``.

    ``backward_fn(g)`` must return one gradient (or None) per parent.
    """
    dtype = parents[0].dtype
    t = Tensor.__new__(Tensor)
    if out.dtype != dtype:
        out = out.astype(dtype)
    if not np.isfinite(out).all():
        raise NumericError(f"non-finite value produced by {op}")
    t.data = out
    t.grad = None
    t.op = op
    if grad_enabled() and any(p.requires_grad for p in parents):
        t.requires_grad = True
        t._parents = tuple(parents)
        t._backward = backward_fn
    else:
        t.requires_grad = False
        t._parents = ()
        t._backward = None
    return t


# ---------------------------------------------------------------------------
# tape and backward
# ---------------------------------------------------------------------------
@dataclass
class Tape:
    """Topologically ordered record of the ops reachable from a loss."""

    nodes: list = field(default_factory=list)

    @classmethod
    def from_loss(cls, loss: Tensor) -> Tape:
        order: list[Tensor] = []
        state: dict[int, int] = {}  # 1 = on stack, 2 = done
        stack = [(loss, False)]
        while stack:
            node, expanded = stack.pop()
            key = id(node)
            if expanded:
                state[key] = 2
                order.append(node)
                continue
            s = state.get(key)
            if s == 2:
                continue
            if s == 1:
                raise RuntimeError("cycle detected in autodiff graph")
            state[key] = 1
            stack.append((node, True))
            for p in node._parents:
                ps = state.get(id(p))
                if ps == 1:
                    raise RuntimeError("cycle detected in autodiff graph")
                if ps is None and p.requires_grad:
                    stack.append((p, False))
        return cls(order)


def backward(loss: Tensor, tape: Tape | None = None) -> dict:
    """Accumulate d(loss)/d(leaf) into ``leaf.grad`` for every leaf that requires grad.

    Returns a map from leaf tensor to the gradient contributed by this call.
    """
    if loss.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return {}
    if tape is None:
        tape = Tape.from_loss(loss)
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    contributed = {}
    for node in reversed(tape.nodes):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.is_leaf:
            contributed[node] = g
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        pgrads = node._backward(g)
        for p, pg in zip(node._parents, pgrads):
            if pg is None or not p.requires_grad:
                continue
            k = id(p)
            if k in grads:
                grads[k] = grads[k] + pg
            else:
                grads[k] = pg
    return contributed


def finite_diff_grad(f: Callable[[Tensor], Tensor | float], x, h: float = 1e-5) -> Tensor:
    """Central-difference gradient of scalar ``f`` at ``x``, one coordinate at a time."""
    base = np.array(as_tensor(x).data, dtype=np.float64)
    out = np.empty_like(base)
    flat = base.reshape(-1)
    res = out.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = _scalar(f(Tensor(base.copy())))
        flat[i] = orig - h
        fm = _scalar(f(Tensor(base.copy())))
        flat[i] = orig
        res[i] = (fp - fm) / (2 * h)
    return Tensor(out)


def _scalar(v) -> float:
    if isinstance(v, Tensor):
        return v.item()
    return float(v)


# ---------------------------------------------------------------------------
# elementwise arithmetic
# ---------------------------------------------------------------------------
def _is_scalar(x) -> bool:
    return isinstance(x, (int, float, np.floating, np.integer))


def add(a, b) -> Tensor:
    if _is_scalar(b):
        return record(a.data + b, (a,), lambda g: (g,), "add_scalar")
    a, b = as_tensor(a, getattr(a, "dtype", None)), as_tensor(b, a.dtype)
    if a.shape != b.shape:
        raise ShapeError(f"add: shapes {a.shape} and {b.shape} differ (use add_bias for broadcasting)")
    return record(a.data + b.data, (a, b), lambda g: (g, g), "add")


def sub(a, b) -> Tensor:
    if _is_scalar(b):
        return add(a, -b)
    return add(a, neg(as_tensor(b, a.dtype)))


def neg(a: Tensor) -> Tensor:
    return record(-a.data, (a,), lambda g: (-g,), "neg")


def mul(a, b) -> Tensor:
    if _is_scalar(b):
        return record(a.data * b, (a,), lambda g: (g * b,), "mul_scalar")
    b = as_tensor(b, a.dtype)
    if a.shape != b.shape:
        raise ShapeError(f"mul: shapes {a.shape} and {b.shape} differ")
    ad, bd = a.data, b.data
    return record(ad * bd, (a, b), lambda g: (g * bd, g * ad), "mul")


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, s in enumerate(shape):
        if s == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def add_bias(x: Tensor, b) -> Tensor:
    """``x + b`` where ``b`` broadcasts against ``x`` (bias maps, attention biases, masks)."""
    b = as_tensor(b, x.dtype)
    try:
        out_shape = np.broadcast_shapes(x.shape, b.shape)
    except ValueError as exc:
        raise ShapeError(f"add_bias: cannot broadcast {b.shape} onto {x.shape}") from exc
    if out_shape != x.shape:
        raise ShapeError(f"add_bias: bias {b.shape} would grow {x.shape}")
    bshape = b.shape
    return record(x.data + b.data, (x, b), lambda g: (g, _unbroadcast(g, bshape)), "add_bias")


def mul_const(x: Tensor, c: np.ndarray) -> Tensor:
    """Multiply by a broadcastable constant array (no gradient to ``c``)."""
    c = np.asarray(c, dtype=x.dtype)
    return record(x.data * c, (x,), lambda g: (_unbroadcast(g * c, x.shape),), "mul_const")


def tsum(x: Tensor, axis=None) -> Tensor:
    shape = x.shape
    out = x.data.sum(axis=axis)

    def bw(g):
        if axis is None:
            return (np.broadcast_to(g, shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),)

    return record(np.asarray(out), (x,), bw, "sum")


def mean(x: Tensor) -> Tensor:
    n = x.size
    return mul(tsum(x), 1.0 / n)


def sqrt(x: Tensor) -> Tensor:
    with np.errstate(invalid="ignore"):  # negative input is reported by record() as NumericError
        y = np.sqrt(x.data)
    return record(y, (x,), lambda g: (g * 0.5 / y,), "sqrt")


# ---------------------------------------------------------------------------
# activations and normalisation
# ---------------------------------------------------------------------------
def leaky_relu(x: Tensor, slope: float = 0.2) -> Tensor:
    pos = x.data >= 0
    y = np.where(pos, x.data, x.data * slope)
    return record(y, (x,), lambda g: (np.where(pos, g, g * slope),), "leaky_relu")


_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


def gelu(x: Tensor) -> Tensor:
    """Exact (erf-based) GELU."""
    xd = x.data
    cdf = 0.5 * (1.0 + erf(xd * _INV_SQRT2))
    pdf = np.exp(-0.5 * xd * xd) * _INV_SQRT2PI
    return record(xd * cdf, (x,), lambda g: (g * (cdf + xd * pdf),), "gelu")


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalise over the last axis, then scale by ``gamma`` and shift by ``beta``."""
    c = x.shape[-1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(f"layer_norm: affine params must have shape ({c},)")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = xc * rstd
    gd = gamma.data

    def bw(g):
        red = tuple(range(g.ndim - 1))
        dgamma = (g * xhat).sum(axis=red)
        dbeta = g.sum(axis=red)
        gx = g * gd
        dx = rstd * (gx - gx.mean(axis=-1, keepdims=True) - xhat * (gx * xhat).mean(axis=-1, keepdims=True))
        return dx, dgamma, dbeta

    return record(xhat * gd + beta.data, (x, gamma, beta), bw, "layer_norm")


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    if not -x.ndim <= axis < x.ndim:
        raise ShapeError(f"softmax: axis {axis} out of range for {x.ndim}-d input")
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return record(y, (x,), bw, "softmax")


# ---------------------------------------------------------------------------
# linear algebra
# ---------------------------------------------------------------------------
def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched matrix product over the last two axes; batch axes must match exactly."""
    if a.ndim < 2 or b.ndim != a.ndim or a.shape[:-2] != b.shape[:-2] or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data

    def bw(g):
        return g @ np.swapaxes(bd, -1, -2), np.swapaxes(ad, -1, -2) @ g

    return record(ad @ bd, (a, b), bw, "matmul")


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``x @ weight.T + bias`` over the last axis; ``weight`` is (out, in)."""
    out_f, in_f = weight.shape
    if x.shape[-1] != in_f:
        raise ShapeError(f"linear: input features {x.shape[-1]} != {in_f}")
    lead = x.shape[:-1]
    x2 = x.data.reshape(-1, in_f)
    wd = weight.data
    y = x2 @ wd.T
    if bias is not None:
        y = y + bias.data
    parents = (x, weight) if bias is None else (x, weight, bias)

    def bw(g):
        g2 = g.reshape(-1, out_f)
        gx = (g2 @ wd).reshape(lead + (in_f,))
        gw = g2.T @ x2
        if bias is None:
            return gx, gw
        return gx, gw, g2.sum(axis=0)

    return record(y.reshape(lead + (out_f,)), parents, bw, "linear")


# ---------------------------------------------------------------------------
# shape manipulation
# ---------------------------------------------------------------------------
def reshape(x: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    old = x.shape
    try:
        y = x.data.reshape(shape)
    except ValueError as exc:
        raise ShapeError(f"reshape: cannot reshape {old} to {shape}") from exc
    return record(y, (x,), lambda g: (g.reshape(old),), "reshape")


def transpose(x: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    if sorted(a % x.ndim for a in axes) != list(range(x.ndim)):
        raise ShapeError(f"transpose: invalid axes {axes} for {x.ndim}-d input")
    inv = tuple(np.argsort([a % x.ndim for a in axes]))
    y = np.ascontiguousarray(x.data.transpose(axes))
    return record(y, (x,), lambda g: (np.ascontiguousarray(g.transpose(inv)),), "transpose")


def getitem(x: Tensor, idx) -> Tensor:
    shape = x.shape
    y = np.array(x.data[idx])

    parts = idx if isinstance(idx, tuple) else (idx,)
    fancy = any(isinstance(i, (list, np.ndarray)) for i in parts)

    def bw(g):
        out = np.zeros(shape, dtype=g.dtype)
        if fancy:
            np.add.at(out, idx, g)
        else:
            out[idx] = g
        return (out,)

    return record(y, (x,), bw, "getitem")


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = list(tensors)
    if not tensors:
        raise ShapeError("concat: empty input")
    nd = tensors[0].ndim
    if not -nd <= axis < nd:
        raise ShapeError(f"concat: axis {axis} out of range")
    axis %= nd
    try:
        y = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise ShapeError(f"concat: {exc}") from exc
    splits = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def bw(g):
        return tuple(np.split(g, splits, axis=axis))

    return record(y, tensors, bw, "concat")


def roll(x: Tensor, shifts, axes) -> Tensor:
    shifts, axes = tuple(shifts), tuple(axes)
    back = tuple(-s for s in shifts)
    return record(np.roll(x.data, shifts, axes), (x,), lambda g: (np.roll(g, back, axes),), "roll")


def pad_reflect(x: Tensor, pads) -> Tensor:
    """Reflect-pad; ``pads`` is one ``(before, after)`` pair per axis."""
    pads = tuple(tuple(p) for p in pads)
    if all(p == (0, 0) for p in pads):
        return x
    shape = x.shape
    src = np.pad(np.arange(x.size).reshape(shape), pads, mode="reflect")
    y = x.data.reshape(-1)[src]

    def bw(g):
        out = np.zeros(x.size, dtype=g.dtype)
        np.add.at(out, src.reshape(-1), g.reshape(-1))
        return (out.reshape(shape),)

    return record(y, (x,), bw, "pad_reflect")


def take(x: Tensor, index: np.ndarray) -> Tensor:
    """Gather rows of ``x`` (axis 0) by an integer index array of any shape."""
    index = np.asarray(index)
    if index.size and (index.min() < 0 or index.max() >= x.shape[0]):
        raise ShapeError("take: index out of range")
    shape = x.shape

    def bw(g):
        out = np.zeros(shape, dtype=g.dtype)
        np.add.at(out, index.reshape(-1), g.reshape((-1,) + shape[1:]))
        return (out,)

    return record(x.data[index], (x,), bw, "take")


# ---------------------------------------------------------------------------
# convolution and sub-pixel rearrangement
# ---------------------------------------------------------------------------
def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation with zero padding, ``x`` N x Cin x H x W, ``weight`` Cout x Cin x kh x kw."""
    if x.ndim != 4 or weight.ndim != 4:
        raise ShapeError("conv2d: expected 4-d input and weight")
    n, cin, h, w = x.shape
    cout, wcin, kh, kw = weight.shape
    if wcin != cin:
        raise ShapeError(f"conv2d: input has {cin} channels, weight expects {wcin}")
    if kh % 2 == 0 or kw % 2 == 0:
        raise ShapeError("conv2d: kernel extents must be odd")
    if padding < 0 or stride < 1:
        raise ShapeError("conv2d: need padding >= 0 and stride >= 1")
    if bias is not None and bias.shape != (cout,):
        raise ShapeError(f"conv2d: bias shape {bias.shape} != ({cout},)")
    hp, wp = h + 2 * padding, w + 2 * padding
    if (hp - kh) % stride or (wp - kw) % stride or hp < kh or wp < kw:
        raise ShapeError("conv2d: output extent is not integral")
    ho, wo = (hp - kh) // stride + 1, (wp - kw) // stride + 1

    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x.data
    if kh == 1 and kw == 1:
        xs = xp[:, :, ::stride, ::stride]
        cols = xs.transpose(0, 2, 3, 1).reshape(-1, cin)
    else:
        win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
        cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, cin * kh * kw)
    wmat = weight.data.reshape(cout, -1)
    y = cols @ wmat.T
    if bias is not None:
        y += bias.data
    y = np.ascontiguousarray(y.reshape(n, ho, wo, cout).transpose(0, 3, 1, 2))
    parents = (x, weight) if bias is None else (x, weight, bias)

    def bw(g):
        g2 = g.transpose(0, 2, 3, 1).reshape(-1, cout)
        gw = (g2.T @ cols).reshape(weight.shape) if weight.requires_grad else None
        gx = None
        if x.requires_grad and stride == 1 and padding < min(kh, kw):
            # full correlation of g with the flipped, channel-swapped kernel: one im2col matmul
            gp = np.pad(g, ((0, 0), (0, 0), (kh - 1 - padding, kh - 1 - padding), (kw - 1 - padding, kw - 1 - padding)))
            gwin = np.lib.stride_tricks.sliding_window_view(gp, (kh, kw), axis=(2, 3))
            gcols_t = gwin.transpose(0, 2, 3, 1, 4, 5).reshape(n * h * w, cout * kh * kw)
            wflip = weight.data[:, :, ::-1, ::-1].transpose(1, 0, 2, 3).reshape(cin, -1)
            gx = np.ascontiguousarray((gcols_t @ wflip.T).reshape(n, h, w, cin).transpose(0, 3, 1, 2))
        elif x.requires_grad:
            gcols = (g2 @ wmat).reshape(n, ho, wo, cin, kh, kw)
            gxp = np.zeros((n, cin, hp, wp), dtype=g.dtype)
            for i in range(kh):
                for j in range(kw):
                    gxp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += gcols[..., i, j].transpose(0, 3, 1, 2)
            gx = gxp[:, :, padding:padding + h, padding:padding + w] if padding else gxp
            gx = np.ascontiguousarray(gx)
        if bias is None:
            return gx, gw
        return gx, gw, g2.sum(axis=0)

    return record(y, parents, bw, "conv2d")


def pixel_shuffle(x: Tensor, r: int) -> Tensor:
    """Depth-to-space: out[n, c, r*h+dy, r*w+dx] = in[n, c*r*r + dy*r + dx, h, w]."""
    n, c, h, w = x.shape
    if c % (r * r):
        raise ShapeError(f"pixel_shuffle: {c} channels not divisible by {r * r}")
    co = c // (r * r)
    y = x.reshape(n, co, r, r, h, w).transpose(0, 1, 4, 2, 5, 3)
    return y.reshape(n, co, h * r, w * r)


def pixel_unshuffle(x: Tensor, r: int) -> Tensor:
    """Inverse of :func:`pixel_shuffle`."""
    n, c, hr, wr = x.shape
    if hr % r or wr % r:
        raise ShapeError(f"pixel_unshuffle: extents {hr}x{wr} not divisible by {r}")
    h, w = hr // r, wr // r
    y = x.reshape(n, c, h, r, w, r).transpose(0, 1, 3, 5, 2, 4)
    return y.reshape(n, c * r * r, h, w)
