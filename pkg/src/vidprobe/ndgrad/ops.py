"""Differentiable kernels over Tensor values.

Broadcasting is restricted to leading batch axes: two operands must have
identical shapes, or the smaller shape must equal the trailing suffix of the
larger (scalars always qualify). Anything else needs an explicit reshape.
"""

from __future__ import annotations

import math
from typing import Optional, Sequence

import numpy as np

from .tensor import ShapeError, Tensor, record

__all__ = [
    "add", "sub", "mul", "matmul", "linear", "softmax", "layer_norm", "gelu",
    "reshape", "transpose", "concat", "slice_axis", "index_select", "expand",
    "mean", "sum_", "embedding", "sdpa", "huber", "sigmoid", "bce_with_logits",
    "mse", "softmax_cross_entropy", "kernel_forward", "KERNELS",
]

LAYER_NORM_EPS = 1e-5
HUBER_DELTA = 1.0


def _as_tensor(x, like: Optional[Tensor] = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.data.dtype if like is not None else np.float32
    return Tensor(np.asarray(x, dtype=dtype))


def _suffix_broadcast(a: np.ndarray, b: np.ndarray) -> None:
    """Validate the leading-batch broadcast rule for a two-operand op."""
    sa, sb = a.shape, b.shape
    small, big = (sa, sb) if len(sa) <= len(sb) else (sb, sa)
    if big[len(big) - len(small):] != small:
        raise ShapeError(f"shapes {sa} and {sb} do not suffix-align")


def _reduce_to(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a broadcast gradient back down to the operand's shape."""
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    return g


def add(a, b) -> Tensor:
    a = _as_tensor(a)
    b = _as_tensor(b, like=a)
    _suffix_broadcast(a.data, b.data)
    out = a.data + b.data

    def backward(g):
        return _reduce_to(g, a.data.shape), _reduce_to(g, b.data.shape)

    return record(out, (a, b), backward)


def mul(a, b) -> Tensor:
    a = _as_tensor(a)
    b = _as_tensor(b, like=a)
    _suffix_broadcast(a.data, b.data)
    out = a.data * b.data

    def backward(g):
        return _reduce_to(g * b.data, a.data.shape), _reduce_to(g * a.data, b.data.shape)

    return record(out, (a, b), backward)


def sub(a, b) -> Tensor:
    """Convenience composition: a + (-1) * b."""
    b = _as_tensor(b)
    return add(a, mul(b, _as_tensor(np.asarray(-1, dtype=b.data.dtype))))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ShapeError("matmul operands must have rank >= 2")
    if a.data.shape[-1] != b.data.shape[-2]:
        raise ShapeError(f"matmul inner dims {a.data.shape} x {b.data.shape}")
    if b.data.ndim > 2 and a.data.shape[:-2] != b.data.shape[:-2]:
        raise ShapeError(f"matmul batch dims differ: {a.data.shape} x {b.data.shape}")
    out = a.data @ b.data

    def backward(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        if b.data.ndim == 2:
            k, n = b.data.shape
            gb = a.data.reshape(-1, k).T @ g.reshape(-1, n)
        else:
            gb = np.swapaxes(a.data, -1, -2) @ g
        return ga, gb

    return record(out, (a, b), backward)


def linear(x: Tensor, w: Tensor, b: Optional[Tensor] = None) -> Tensor:
    """Fused x @ w + bias; one tape entry for the hot path."""
    x, w = _as_tensor(x), _as_tensor(w)
    if w.data.ndim != 2 or x.data.ndim < 2 or x.data.shape[-1] != w.data.shape[0]:
        raise ShapeError(f"linear shapes {x.data.shape} x {w.data.shape}")
    out = x.data @ w.data
    if b is not None:
        b = _as_tensor(b)
        if b.data.shape != (w.data.shape[1],):
            raise ShapeError(f"linear bias shape {b.data.shape}")
        out += b.data

    def backward(g):
        k, n = w.data.shape
        g2 = g.reshape(-1, n)
        gx = g @ w.data.T
        gw = x.data.reshape(-1, k).T @ g2
        gb = g2.sum(axis=0) if b is not None else None
        return (gx, gw, gb) if b is not None else (gx, gw)

    inputs = (x, w, b) if b is not None else (x, w)
    return record(out, inputs, backward)


def softmax(x: Tensor) -> Tensor:
    """Softmax over the last axis."""
    x = _as_tensor(x)
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        return (p * (g - (g * p).sum(axis=-1, keepdims=True)),)

    return record(p, (x,), backward)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = LAYER_NORM_EPS) -> Tensor:
    """Normalize over the last axis, then scale and shift."""
    x, gain, bias = _as_tensor(x), _as_tensor(gain), _as_tensor(bias)
    d = x.data.shape[-1]
    if gain.data.shape != (d,) or bias.data.shape != (d,):
        raise ShapeError(f"layer_norm gain/bias must be ({d},)")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gain.data + bias.data

    def backward(g):
        ggain = _reduce_to(g * xhat, gain.data.shape)
        gbias = _reduce_to(g, bias.data.shape)
        gxh = g * gain.data
        gx = inv * (gxh - gxh.mean(axis=-1, keepdims=True)
                    - xhat * (gxh * xhat).mean(axis=-1, keepdims=True))
        return gx, ggain, gbias

    return record(out, (x, gain, bias), backward)


_GELU_C = math.sqrt(2.0 / math.pi)
_GELU_A = 0.044715


def gelu(x: Tensor) -> Tensor:
    """GeLU, tanh approximation."""
    x = _as_tensor(x)
    xd = x.data
    x2 = xd * xd
    u = _GELU_C * (xd + _GELU_A * x2 * xd)
    t = np.tanh(u)
    out = 0.5 * xd * (1.0 + t)

    def backward(g):
        du = _GELU_C * (1.0 + 3.0 * _GELU_A * x2)
        return (g * (0.5 * (1.0 + t) + 0.5 * xd * (1.0 - t * t) * du),)

    return record(out, (x,), backward)


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    x = _as_tensor(x)
    shape = tuple(int(s) for s in shape)
    try:
        out = x.data.reshape(shape)
    except ValueError as exc:
        raise ShapeError(str(exc)) from None

    def backward(g):
        return (g.reshape(x.data.shape),)

    return record(out, (x,), backward)


def transpose(x: Tensor, axes: Sequence[int]) -> Tensor:
    x = _as_tensor(x)
    axes = tuple(axes)
    if sorted(axes) != list(range(x.data.ndim)):
        raise ShapeError(f"transpose axes {axes} invalid for rank {x.data.ndim}")
    inv = tuple(np.argsort(axes))
    out = np.ascontiguousarray(x.data.transpose(axes))

    def backward(g):
        return (np.ascontiguousarray(g.transpose(inv)),)

    return record(out, (x,), backward)


def concat(xs: Sequence[Tensor], axis: int) -> Tensor:
    xs = [_as_tensor(x) for x in xs]
    if not xs:
        raise ShapeError("concat of empty sequence")
    out = np.concatenate([x.data for x in xs], axis=axis)
    sizes = [x.data.shape[axis] for x in xs]
    offsets = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.ascontiguousarray(p) for p in np.split(g, offsets, axis=axis))

    return record(out, tuple(xs), backward)


def slice_axis(x: Tensor, axis: int, start: int, stop: int) -> Tensor:
    x = _as_tensor(x)
    n = x.data.shape[axis]
    if not (0 <= start <= stop <= n):
        raise ShapeError(f"slice [{start}:{stop}] out of range for axis size {n}")
    sl = [slice(None)] * x.data.ndim
    sl[axis] = slice(start, stop)
    sl = tuple(sl)
    out = np.ascontiguousarray(x.data[sl])

    def backward(g):
        full = np.zeros_like(x.data)
        full[sl] = g
        return (full,)

    return record(out, (x,), backward)


def index_select(x: Tensor, idx: np.ndarray, axis: int) -> Tensor:
    """Gather along one axis with an integer index vector (repeats allowed)."""
    x = _as_tensor(x)
    idx = np.asarray(idx, dtype=np.intp)
    if idx.ndim != 1:
        raise ShapeError("index_select expects a 1-d index vector")
    if idx.size and (idx.min() < 0 or idx.max() >= x.data.shape[axis]):
        raise ShapeError(f"index out of range for axis size {x.data.shape[axis]}")
    out = np.take(x.data, idx, axis=axis)
    unique = len(np.unique(idx)) == idx.size

    def backward(g):
        gx = np.zeros_like(x.data)
        gm = np.moveaxis(gx, axis, 0)
        if unique:
            gm[idx] = np.moveaxis(g, axis, 0)
        else:
            np.add.at(gm, idx, np.moveaxis(g, axis, 0))
        return (gx,)

    return record(out, (x,), backward)


def expand(x: Tensor, shape: Sequence[int]) -> Tensor:
    """Broadcast-copy unit/missing leading axes out to ``shape``."""
    x = _as_tensor(x)
    shape = tuple(int(s) for s in shape)
    try:
        out = np.ascontiguousarray(np.broadcast_to(x.data, shape))
    except ValueError as exc:
        raise ShapeError(str(exc)) from None

    def backward(g):
        extra = g.ndim - x.data.ndim
        if extra:
            g = g.sum(axis=tuple(range(extra)))
        kept = tuple(i for i, (a, b) in enumerate(zip(g.shape, x.data.shape)) if a != b)
        if kept:
            g = g.sum(axis=kept, keepdims=True)
        return (g,)

    return record(out, (x,), backward)


def _normalize_axis(axis, ndim):
    if axis is None:
        return None
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def sum_(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    x = _as_tensor(x)
    ax = _normalize_axis(axis, x.data.ndim)
    out = x.data.sum(axis=ax, keepdims=keepdims)

    def backward(g):
        if ax is not None and not keepdims:
            g = np.expand_dims(g, ax)
        return (np.broadcast_to(g, x.data.shape).copy(),)

    return record(np.asarray(out), (x,), backward)


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    x = _as_tensor(x)
    ax = _normalize_axis(axis, x.data.ndim)
    out = x.data.mean(axis=ax, keepdims=keepdims)
    count = x.data.size if ax is None else int(np.prod([x.data.shape[a] for a in ax]))

    def backward(g):
        if ax is not None and not keepdims:
            g = np.expand_dims(g, ax)
        return (np.broadcast_to(g, x.data.shape) / count,)

    return record(np.asarray(out), (x,), backward)


def embedding(table: Tensor, idx) -> Tensor:
    """Row lookup: out[i...] = table[idx[i...]]."""
    table = _as_tensor(table)
    idx = np.asarray(idx, dtype=np.intp)
    if idx.size and (idx.min() < 0 or idx.max() >= table.data.shape[0]):
        raise ShapeError(f"embedding index out of range for table of {table.data.shape[0]} rows")
    out = table.data[idx]

    def backward(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, idx, g)
        return (gt,)

    return record(out, (table,), backward)


def sdpa(q: Tensor, k: Tensor, v: Tensor, mask: Optional[np.ndarray] = None) -> Tensor:
    """Scaled dot-product attention with an optional boolean mask.

    q: (..., nq, dh); k, v: (..., nk, dh); mask: (nq, nk) bool, True = may
    attend. Every query row must keep at least one allowed key.
    """
    q, k, v = _as_tensor(q), _as_tensor(k), _as_tensor(v)
    if q.data.shape[-1] != k.data.shape[-1] or k.data.shape[:-1] != v.data.shape[:-1]:
        raise ShapeError(f"sdpa shapes q{q.data.shape} k{k.data.shape} v{v.data.shape}")
    scale = 1.0 / math.sqrt(q.data.shape[-1])
    scores = (q.data @ np.swapaxes(k.data, -1, -2)) * scale
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != (q.data.shape[-2], k.data.shape[-2]):
            raise ShapeError(f"sdpa mask shape {mask.shape}")
        if not mask.any(axis=-1).all():
            raise ShapeError("sdpa mask has a query row with no allowed keys")
        scores = np.where(mask, scores, -np.inf)
    m = scores.max(axis=-1, keepdims=True)
    p = np.exp(scores - m)
    p /= p.sum(axis=-1, keepdims=True)
    out = p @ v.data

    def backward(g):
        gv = np.swapaxes(p, -1, -2) @ g
        gp = g @ np.swapaxes(v.data, -1, -2)
        gs = p * (gp - (p * gp).sum(axis=-1, keepdims=True))
        gq = (gs @ k.data) * scale
        gk = (np.swapaxes(gs, -1, -2) @ q.data) * scale
        return gq, gk, gv

    return record(out, (q, k, v), backward)


def huber(pred: Tensor, target: Tensor, delta: float = HUBER_DELTA) -> Tensor:
    """Elementwise Huber; reduce explicitly with mean/sum."""
    pred, target = _as_tensor(pred), _as_tensor(target)
    if pred.data.shape != target.data.shape:
        raise ShapeError(f"huber shapes {pred.data.shape} vs {target.data.shape}")
    r = pred.data - target.data
    a = np.abs(r)
    quad = a <= delta
    out = np.where(quad, 0.5 * r * r, delta * (a - 0.5 * delta))

    def backward(g):
        gp = np.where(quad, r, delta * np.sign(r)) * g
        return gp, -gp

    return record(out, (pred, target), backward)


def sigmoid(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    xd = x.data
    out = np.where(xd >= 0, 1.0 / (1.0 + np.exp(-np.abs(xd))),
                   np.exp(-np.abs(xd)) / (1.0 + np.exp(-np.abs(xd))))
    out = out.astype(xd.dtype)

    def backward(g):
        return (g * out * (1.0 - out),)

    return record(out, (x,), backward)


def bce_with_logits(logits: Tensor, targets: Tensor) -> Tensor:
    """Elementwise binary cross-entropy on raw logits (numerically stable)."""
    logits, targets = _as_tensor(logits), _as_tensor(targets)
    if logits.data.shape != targets.data.shape:
        raise ShapeError(f"bce shapes {logits.data.shape} vs {targets.data.shape}")
    x, t = logits.data, targets.data
    out = np.maximum(x, 0) - x * t + np.log1p(np.exp(-np.abs(x)))
    s = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                 np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))

    def backward(g):
        return g * (s - t), g * (-x)

    return record(out, (logits, targets), backward)


def mse(pred: Tensor, target: Tensor) -> Tensor:
    """Scalar mean squared error."""
    pred, target = _as_tensor(pred), _as_tensor(target)
    if pred.data.shape != target.data.shape:
        raise ShapeError(f"mse shapes {pred.data.shape} vs {target.data.shape}")
    r = pred.data - target.data
    out = np.asarray((r * r).mean(), dtype=pred.data.dtype)
    n = r.size

    def backward(g):
        gp = (2.0 / n) * r * g
        return gp, -gp

    return record(out, (pred, target), backward)


def softmax_cross_entropy(logits: Tensor, labels) -> Tensor:
    """Scalar mean cross-entropy; logits (..., C), integer labels (...)."""
    logits = _as_tensor(logits)
    labels = np.asarray(labels, dtype=np.intp)
    if labels.shape != logits.data.shape[:-1]:
        raise ShapeError(f"labels shape {labels.shape} vs logits {logits.data.shape}")
    c = logits.data.shape[-1]
    if labels.size and (labels.min() < 0 or labels.max() >= c):
        raise ShapeError(f"label outside [0, {c})")
    flat = logits.data.reshape(-1, c)
    lab = labels.reshape(-1)
    m = flat.max(axis=-1, keepdims=True)
    z = flat - m
    lse = np.log(np.exp(z).sum(axis=-1)) + m[:, 0]
    picked = flat[np.arange(flat.shape[0]), lab]
    out = np.asarray((lse - picked).mean(), dtype=logits.data.dtype)

    def backward(g):
        p = np.exp(z)
        p /= p.sum(axis=-1, keepdims=True)
        p[np.arange(flat.shape[0]), lab] -= 1.0
        return ((g / flat.shape[0]) * p.reshape(logits.data.shape),)

    return record(out, (logits,), backward)


KERNELS = {
    "matmul": matmul,
    "add": add,
    "mul": mul,
    "softmax": softmax,
    "layer-norm": layer_norm,
    "gelu": gelu,
    "reshape": reshape,
    "transpose": transpose,
    "concat": concat,
    "slice": slice_axis,
    "mean": mean,
    "sum": sum_,
    "embedding-lookup": embedding,
    "scaled-dot-product-attention": sdpa,
    "scaled-dot-product-attention-with-mask": sdpa,
    "huber": huber,
    "sigmoid": sigmoid,
    "bce-with-logits": bce_with_logits,
    "mse": mse,
    "softmax-cross-entropy": softmax_cross_entropy,
}


def kernel_forward(name: str, inputs: Sequence, **kwargs) -> Tensor:
    """Dispatch a kernel by id; concat takes its inputs as one sequence."""
    try:
        fn = KERNELS[name]
    except KeyError:
        raise KeyError(f"unknown kernel {name!r}; known: {sorted(KERNELS)}") from None
    if name == "concat":
        return fn(inputs, **kwargs)
    return fn(*inputs, **kwargs)
