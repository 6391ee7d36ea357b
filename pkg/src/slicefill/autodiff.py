"""Dense-tensor reverse-mode automatic differentiation.

A small numpy-backed engine: every operation computes its result eagerly
and, when any input participates in differentiation, registers a backward
closure over forward-time snapshots of the data it needs. `backward` walks
the graph once in reverse topological order with a fixed accumulation
order, so runs are bit-reproducible for a given seed.

Training runs at float32; gradient checking runs the same code paths at
float64 (dtype follows the inputs, it is never silently promoted).
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import erf

from .errors import ConfigError, ContractError, DegenerateInputError, ShapeError

Array = np.ndarray

_INV_SQRT2 = float(1.0 / np.sqrt(2.0))
_INV_SQRT2PI = float(1.0 / np.sqrt(2.0 * np.pi))


class Tensor:
    """Multi-dimensional real array participating in reverse-mode AD.

    `data` is a numpy float array (row-major). `grad`, once backward has
    run, has the same shape as `data`. Repeated backward calls without a
    reset accumulate into `grad`. Tensors are treated as immutable once
    created; only `grad` is written by the backward pass.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_bw")

    def __init__(self, data, requires_grad: bool = False, _parents=(), _bw=None):
        arr = np.asarray(data)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float32)
        self.data: Array = arr
        self.requires_grad = bool(requires_grad)
        self.grad: Array | None = None
        self._parents = _parents
        self._bw = _bw

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

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # arithmetic sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __neg__(self):
        return neg(self)

    def __truediv__(self, other):
        return div(self, other)

    def __pow__(self, p):
        return pow_const(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return getitem(self, key)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, axes=None):
        return transpose(self, axes)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def constant(x, dtype=None) -> Tensor:
    arr = np.asarray(x, dtype=dtype)
    if arr.dtype.kind != "f":
        arr = arr.astype(np.float32)
    return Tensor(arr)


def _make(out: Array, parents: tuple, bw: Callable) -> Tensor:
    if any(p.requires_grad for p in parents):
        return Tensor(out, requires_grad=True, _parents=parents, _bw=bw)
    return Tensor(out)


def _unbroadcast(g: Array, shape: tuple[int, ...]) -> Array:
    """Sum gradient over axes that numpy broadcasting expanded."""
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
# graph traversal
# ---------------------------------------------------------------------------

def backward(loss: Tensor) -> None:
    """Accumulate dloss/dx into `grad` of every requires_grad tensor.

    The loss must be scalar (size 1). Calling backward twice on the same
    graph adds the gradients a second time; reset with `zero_grads` between
    passes if accumulation is not wanted.
    """
    if loss.data.size != 1:
        raise ContractError(
            f"backward requires a scalar loss, got shape {loss.data.shape}"
        )
    if not loss.requires_grad:
        return

    topo: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))

    flows: dict[int, Array] = {id(loss): np.ones_like(loss.data)}

    def acc(p: Tensor, contrib: Array) -> None:
        if not p.requires_grad:
            return
        pid = id(p)
        prev = flows.get(pid)
        flows[pid] = contrib if prev is None else prev + contrib

    for node in reversed(topo):
        g = flows.pop(id(node), None)
        if g is None:
            continue
        node.grad = g if node.grad is None else node.grad + g
        if node._bw is not None:
            node._bw(g, acc)


def zero_grads(tensors: Iterable[Tensor]) -> None:
    for t in tensors:
        t.grad = None


# ---------------------------------------------------------------------------
# elementwise and broadcast arithmetic
# ---------------------------------------------------------------------------

def _is_scalar(x) -> bool:
    return isinstance(x, (int, float)) or (
        isinstance(x, np.generic) and np.ndim(x) == 0
    )


def add(a, b) -> Tensor:
    # python scalars stay raw so float32 graphs are not promoted to float64
    if _is_scalar(b):
        a = as_tensor(a)

        def bw(g, acc):
            acc(a, g)

        return _make(a.data + b, (a,), bw)
    if _is_scalar(a):
        return add(b, a)
    a, b = as_tensor(a), as_tensor(b)
    out = a.data + b.data
    ash, bsh = a.data.shape, b.data.shape

    def bw(g, acc):
        acc(a, _unbroadcast(g, ash))
        acc(b, _unbroadcast(g, bsh))

    return _make(out, (a, b), bw)


def sub(a, b) -> Tensor:
    if _is_scalar(b):
        return add(a, -b)
    if _is_scalar(a):
        return add(neg(b), a)
    a, b = as_tensor(a), as_tensor(b)
    out = a.data - b.data
    ash, bsh = a.data.shape, b.data.shape

    def bw(g, acc):
        acc(a, _unbroadcast(g, ash))
        acc(b, _unbroadcast(-g, bsh))

    return _make(out, (a, b), bw)


def mul(a, b) -> Tensor:
    if _is_scalar(b):
        a = as_tensor(a)
        s = b

        def bw(g, acc):
            acc(a, g * s)

        return _make(a.data * s, (a,), bw)
    if _is_scalar(a):
        return mul(b, a)
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    out = ad * bd

    def bw(g, acc):
        acc(a, _unbroadcast(g * bd, ad.shape))
        acc(b, _unbroadcast(g * ad, bd.shape))

    return _make(out, (a, b), bw)


def neg(a) -> Tensor:
    a = as_tensor(a)

    def bw(g, acc):
        acc(a, -g)

    return _make(-a.data, (a,), bw)


def div(a, b) -> Tensor:
    if _is_scalar(b):
        return mul(a, 1.0 / b)
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    out = ad / bd

    def bw(g, acc):
        acc(a, _unbroadcast(g / bd, ad.shape))
        acc(b, _unbroadcast(-g * ad / (bd * bd), bd.shape))

    return _make(out, (a, b), bw)


def pow_const(a, p) -> Tensor:
    a = as_tensor(a)
    p = float(p)
    ad = a.data
    out = ad ** p

    def bw(g, acc):
        acc(a, g * p * ad ** (p - 1.0))

    return _make(out, (a,), bw)


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)

    def bw(g, acc):
        acc(a, g * out)

    return _make(out, (a,), bw)


def log(a) -> Tensor:
    a = as_tensor(a)
    ad = a.data
    out = np.log(ad)

    def bw(g, acc):
        acc(a, g / ad)

    return _make(out, (a,), bw)


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    out = np.sqrt(a.data)

    def bw(g, acc):
        acc(a, g * (0.5 / out))

    return _make(out, (a,), bw)


def abs_(a) -> Tensor:
    a = as_tensor(a)
    ad = a.data
    out = np.abs(ad)

    def bw(g, acc):
        acc(a, g * np.sign(ad))

    return _make(out, (a,), bw)


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)

    def bw(g, acc):
        acc(a, g * (1.0 - out * out))

    return _make(out, (a,), bw)


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    ad = a.data
    # stable two-sided form
    out = np.where(ad >= 0, 1.0 / (1.0 + np.exp(-ad)),
                   np.exp(ad) / (1.0 + np.exp(ad))).astype(ad.dtype, copy=False)

    def bw(g, acc):
        acc(a, g * out * (1.0 - out))

    return _make(out, (a,), bw)


def gelu(a) -> Tensor:
    """Exact GELU: x * Phi(x), with Phi the standard normal CDF."""
    a = as_tensor(a)
    ad = a.data
    cdf = 0.5 * (1.0 + erf(ad * _INV_SQRT2))
    out = (ad * cdf).astype(ad.dtype, copy=False)

    def bw(g, acc):
        pdf = np.exp(-0.5 * ad * ad) * _INV_SQRT2PI
        acc(a, g * (cdf + ad * pdf))

    return _make(out, (a,), bw)


def leaky_relu(a, slope: float = 0.2) -> Tensor:
    a = as_tensor(a)
    ad = a.data
    factor = np.where(ad > 0, 1.0, slope).astype(ad.dtype, copy=False)
    out = ad * factor

    def bw(g, acc):
        acc(a, g * factor)

    return _make(out, (a,), bw)


def elu(a, alpha: float = 1.0) -> Tensor:
    a = as_tensor(a)
    ad = a.data
    neg_part = alpha * (np.exp(np.minimum(ad, 0.0)) - 1.0)
    out = np.where(ad > 0, ad, neg_part).astype(ad.dtype, copy=False)

    def bw(g, acc):
        d = np.where(ad > 0, 1.0, neg_part + alpha).astype(ad.dtype, copy=False)
        acc(a, g * d)

    return _make(out, (a,), bw)


# ---------------------------------------------------------------------------
# shape manipulation
# ---------------------------------------------------------------------------

def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    old = a.data.shape
    out = a.data.reshape(shape)

    def bw(g, acc):
        acc(a, g.reshape(old))

    return _make(out, (a,), bw)


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    out = a.data.transpose(axes)
    if axes is None:
        inv = None
    else:
        inv = tuple(np.argsort(axes))

    def bw(g, acc):
        acc(a, g.transpose(inv))

    return _make(out, (a,), bw)


def getitem(a, key) -> Tensor:
    """Basic (slice/int/ellipsis) indexing; advanced indexing is not supported."""
    a = as_tensor(a)
    shape = a.data.shape
    out = a.data[key]

    def bw(g, acc):
        buf = np.zeros(shape, dtype=g.dtype)
        buf[key] = g
        acc(a, buf)

    return _make(out, (a,), bw)


def concat(parts: Sequence, axis: int = 0) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    out = np.concatenate([p.data for p in parts], axis=axis)
    sizes = [p.data.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def bw(g, acc):
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(lo, hi)
            acc(p, g[tuple(idx)])

    return _make(out, tuple(parts), bw)


def _expand_reduced(g: Array, shape: tuple[int, ...], axis, keepdims: bool) -> Array:
    if axis is None:
        return np.broadcast_to(g, shape)
    if not keepdims:
        axes = axis if isinstance(axis, tuple) else (axis,)
        axes = tuple(ax % len(shape) for ax in axes)
        g = np.expand_dims(g, axes)
    return np.broadcast_to(g, shape)


def sum_(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    shape = a.data.shape
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def bw(g, acc):
        acc(a, _expand_reduced(g, shape, axis, keepdims).astype(g.dtype, copy=False))

    return _make(out, (a,), bw)


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    shape = a.data.shape
    out = a.data.mean(axis=axis, keepdims=keepdims)
    count = a.data.size / max(out.size, 1)

    def bw(g, acc):
        acc(a, _expand_reduced(g, shape, axis, keepdims) / count)

    return _make(out, (a,), bw)


def abs_mean(a) -> Tensor:
    """Mean absolute value of all entries."""
    return mean(abs_(a))


# ---------------------------------------------------------------------------
# linear algebra
# ---------------------------------------------------------------------------

def matmul(a, b) -> Tensor:
    """Matrix product with numpy batch semantics (both operands ndim >= 2)."""
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    if ad.ndim < 2 or bd.ndim < 2:
        raise ShapeError(
            f"matmul requires ndim >= 2 operands, got {ad.shape} and {bd.shape}"
        )
    if ad.shape[-1] != bd.shape[-2]:
        raise ShapeError(
            f"matmul inner dimensions disagree: {ad.shape} vs {bd.shape}"
        )
    out = ad @ bd

    def bw(g, acc):
        acc(a, _unbroadcast(g @ np.swapaxes(bd, -1, -2), ad.shape))
        acc(b, _unbroadcast(np.swapaxes(ad, -1, -2) @ g, bd.shape))

    return _make(out, (a, b), bw)


def softmax(a, axis: int = -1) -> Tensor:
    """Softmax along `axis`, computed with max subtraction for stability."""
    a = as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def bw(g, acc):
        acc(a, (g - (g * out).sum(axis=axis, keepdims=True)) * out)

    return _make(out, (a,), bw)


def layer_norm(a, gamma, beta, eps: float = 1e-5) -> Tensor:
    """Standardize the last axis, then scale by gamma and shift by beta."""
    if eps <= 0:
        raise ConfigError(f"layer_norm eps must be > 0, got {eps}")
    a, gamma, beta = as_tensor(a), as_tensor(gamma), as_tensor(beta)
    d = a.data.shape[-1]
    if gamma.data.shape != (d,) or beta.data.shape != (d,):
        raise ShapeError(
            f"layer_norm gamma/beta must have shape ({d},), got "
            f"{gamma.data.shape} and {beta.data.shape}"
        )
    mu = a.data.mean(axis=-1, keepdims=True)
    xc = a.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gamma.data + beta.data
    gdata = gamma.data

    def bw(g, acc):
        red = tuple(range(g.ndim - 1))
        acc(gamma, (g * xhat).sum(axis=red))
        acc(beta, g.sum(axis=red))
        gx = g * gdata
        acc(a, inv * (gx - gx.mean(axis=-1, keepdims=True)
                      - xhat * (gx * xhat).mean(axis=-1, keepdims=True)))

    return _make(out, (a, gamma, beta), bw)


def cosine_sim(a, b) -> Tensor:
    """Cosine similarity of two nonzero 1-D vectors; result in [-1, 1]."""
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    if ad.ndim != 1 or bd.ndim != 1 or ad.shape != bd.shape:
        raise ShapeError(
            f"cosine_sim expects equal-length 1-D vectors, got {ad.shape} and {bd.shape}"
        )
    na = float(np.linalg.norm(ad))
    nb = float(np.linalg.norm(bd))
    if na == 0.0 or nb == 0.0:
        raise DegenerateInputError("cosine_sim is undefined for a zero vector")
    dot = float(ad @ bd)
    out = np.asarray(dot / (na * nb), dtype=ad.dtype)
    c = float(out)

    def bw(g, acc):
        acc(a, g * (bd / (na * nb) - c * ad / (na * na)))
        acc(b, g * (ad / (na * nb) - c * bd / (nb * nb)))

    return _make(out, (a, b), bw)


# ---------------------------------------------------------------------------
# convolutions and resampling
# ---------------------------------------------------------------------------

def _check_odd(kshape: tuple[int, ...], op: str) -> None:
    if any(k % 2 == 0 for k in kshape):
        raise ConfigError(f"{op} requires odd kernel dimensions, got {kshape}")


def depthwise_conv3d(x, kernel) -> Tensor:
    """Per-channel 3-D correlation with zero (same) padding, stride 1.

    x is [C, D, H, W]; kernel is [C, kd, kh, kw] with odd dims. The output
    shape equals the input shape.
    """
    x, kernel = as_tensor(x), as_tensor(kernel)
    xd, kd_ = x.data, kernel.data
    if xd.ndim != 4 or kd_.ndim != 4:
        raise ShapeError(
            f"depthwise_conv3d expects x [C,D,H,W] and kernel [C,kd,kh,kw], "
            f"got {xd.shape} and {kd_.shape}"
        )
    if xd.shape[0] != kd_.shape[0]:
        raise ShapeError(
            f"depthwise_conv3d channel mismatch: x has {xd.shape[0]}, "
            f"kernel has {kd_.shape[0]}"
        )
    _check_odd(kd_.shape[1:], "depthwise_conv3d")
    pads = tuple(k // 2 for k in kd_.shape[1:])
    xp = np.pad(xd, ((0, 0),) + tuple((p, p) for p in pads))
    win = sliding_window_view(xp, kd_.shape[1:], axis=(1, 2, 3))
    out = np.einsum("cdhwijk,cijk->cdhw", win, kd_, optimize=True)

    def bw(g, acc):
        acc(kernel, np.einsum("cdhwijk,cdhw->cijk", win, g, optimize=True))
        gp = np.pad(g, ((0, 0),) + tuple((p, p) for p in pads))
        gwin = sliding_window_view(gp, kd_.shape[1:], axis=(1, 2, 3))
        kflip = kd_[:, ::-1, ::-1, ::-1]
        acc(x, np.einsum("cdhwijk,cijk->cdhw", gwin, kflip, optimize=True))

    return _make(out.astype(xd.dtype, copy=False), (x, kernel), bw)


def conv3d(x, w, b=None) -> Tensor:
    """Dense 3-D correlation, zero (same) padding, stride 1.

    x is [Cin, D, H, W]; w is [Cout, Cin, kd, kh, kw] with odd dims;
    b, when given, is [Cout].
    """
    x, w = as_tensor(x), as_tensor(w)
    b = None if b is None else as_tensor(b)
    xd, wd = x.data, w.data
    if xd.ndim != 4 or wd.ndim != 5 or xd.shape[0] != wd.shape[1]:
        raise ShapeError(
            f"conv3d expects x [Cin,D,H,W] and w [Cout,Cin,kd,kh,kw] with "
            f"matching Cin, got {xd.shape} and {wd.shape}"
        )
    _check_odd(wd.shape[2:], "conv3d")
    pads = tuple(k // 2 for k in wd.shape[2:])
    xp = np.pad(xd, ((0, 0),) + tuple((p, p) for p in pads))
    win = sliding_window_view(xp, wd.shape[2:], axis=(1, 2, 3))
    # win: [Cin, D, H, W, kd, kh, kw]
    out = np.tensordot(wd, win, axes=([1, 2, 3, 4], [0, 4, 5, 6]))
    if b is not None:
        out = out + b.data[:, None, None, None]

    def bw(g, acc):
        acc(w, np.tensordot(g, win, axes=([1, 2, 3], [1, 2, 3])))
        if b is not None:
            acc(b, g.sum(axis=(1, 2, 3)))
        wt = wd.transpose(1, 0, 2, 3, 4)[:, :, ::-1, ::-1, ::-1]
        gp = np.pad(g, ((0, 0),) + tuple((p, p) for p in pads))
        gwin = sliding_window_view(gp, wd.shape[2:], axis=(1, 2, 3))
        acc(x, np.tensordot(wt, gwin, axes=([1, 2, 3, 4], [0, 4, 5, 6])))

    parents = (x, w) if b is None else (x, w, b)
    return _make(out.astype(xd.dtype, copy=False), parents, bw)


def conv2d(x, w, b=None, stride: int = 1) -> Tensor:
    """Batched 2-D correlation: x [B, Cin, H, W], w [Cout, Cin, kh, kw].

    Zero padding of kh//2, kw//2; output spatial size is
    (H + 2p - kh)//stride + 1.
    """
    x, w = as_tensor(x), as_tensor(w)
    b = None if b is None else as_tensor(b)
    xd, wd = x.data, w.data
    if xd.ndim != 4 or wd.ndim != 4 or xd.shape[1] != wd.shape[1]:
        raise ShapeError(
            f"conv2d expects x [B,Cin,H,W] and w [Cout,Cin,kh,kw] with "
            f"matching Cin, got {xd.shape} and {wd.shape}"
        )
    _check_odd(wd.shape[2:], "conv2d")
    kh, kw = wd.shape[2:]
    ph, pw = kh // 2, kw // 2
    s = int(stride)
    xp = np.pad(xd, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::s, ::s]
    # win: [B, Cin, Ho, Wo, kh, kw]
    out = np.tensordot(win, wd, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
    if b is not None:
        out = out + b.data[None, :, None, None]
    ho, wo = out.shape[2:]

    def bw(g, acc):
        acc(w, np.tensordot(g, win, axes=([0, 2, 3], [0, 2, 3])))
        if b is not None:
            acc(b, g.sum(axis=(0, 2, 3)))
        buf = np.zeros_like(xp)
        for i in range(kh):
            for j in range(kw):
                contrib = np.tensordot(g, wd[:, :, i, j], axes=([1], [0]))
                buf[:, :, i:i + s * ho:s, j:j + s * wo:s] += contrib.transpose(0, 3, 1, 2)
        acc(x, buf[:, :, ph:ph + xd.shape[2], pw:pw + xd.shape[3]])

    parents = (x, w) if b is None else (x, w, b)
    return _make(out.astype(xd.dtype, copy=False), parents, bw)


def upsample2x(x) -> Tensor:
    """Nearest-neighbour x2 upsampling of the last two axes of [C, D, H, W]."""
    x = as_tensor(x)
    xd = x.data
    if xd.ndim != 4:
        raise ShapeError(f"upsample2x expects [C,D,H,W], got {xd.shape}")
    out = np.repeat(np.repeat(xd, 2, axis=2), 2, axis=3)
    c, d, h, w = xd.shape

    def bw(g, acc):
        acc(x, g.reshape(c, d, h, 2, w, 2).sum(axis=(3, 5)))

    return _make(out, (x,), bw)


# ---------------------------------------------------------------------------
# gradient checking
# ---------------------------------------------------------------------------

def grad_check(f: Callable[[Tensor], Tensor], x: Tensor, eps: float = 1e-5) -> float:
    """Compare reverse-mode gradients of scalar-valued `f` at `x` against
    central finite differences, coordinate by coordinate.

    Returns the worst relative error, with denominator
    max(|analytic|, |numeric|, 1e-8). `f` may close over other tensors;
    only `x` is perturbed.
    """
    if not (1e-7 <= eps <= 1e-3):
        raise ConfigError(f"grad_check eps must lie in [1e-7, 1e-3], got {eps}")
    was = x.requires_grad
    x.requires_grad = True
    x.grad = None
    try:
        out = f(x)
        if out.data.size != 1:
            raise ContractError(
                f"grad_check requires scalar-valued f, got shape {out.data.shape}"
            )
        backward(out)
        g = np.zeros_like(x.data) if x.grad is None else x.grad
        gflat = g.reshape(-1)
        flat = x.data.reshape(-1)
        worst = 0.0
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            fp = float(f(x).data.reshape(-1)[0])
            flat[i] = orig - eps
            fm = float(f(x).data.reshape(-1)[0])
            flat[i] = orig
            num = (fp - fm) / (2.0 * eps)
            ana = float(gflat[i])
            rel = abs(num - ana) / max(abs(num), abs(ana), 1e-8)
            worst = max(worst, rel)
        return worst
    finally:
        x.requires_grad = was
