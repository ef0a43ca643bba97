"""Shared building blocks for the readout heads."""

from __future__ import annotations

import math
from typing import Optional

import numpy as np

from .. import ndgrad as ng
from ..backbone.checkpoint import read_tensors, write_tensors
from ..errors import FormatError

__all__ = ["ParamBag", "fourier_encode", "attention_pool", "CrossAttention",
           "save_readout", "load_readout", "register_head"]


class ParamBag:
    """Named-parameter container; heads subclass it."""

    kind = "base"

    def __init__(self):
        self.params: dict[str, ng.Tensor] = {}
        self.config: dict = {}

    def add(self, name: str, arr: np.ndarray) -> ng.Tensor:
        t = ng.Tensor(arr, requires_grad=True)
        self.params[name] = t
        return t

    def adopt(self, prefix: str, other: "ParamBag") -> None:
        for name, t in other.params.items():
            self.params[f"{prefix}.{name}"] = t

    def param_list(self) -> list[ng.Tensor]:
        return list(self.params.values())

    def parameter_count(self) -> int:
        return sum(int(p.data.size) for p in self.params.values())

    def zero_grads(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    def load_state(self, tensors: dict[str, np.ndarray]) -> None:
        missing = set(self.params) - set(tensors)
        extra = set(tensors) - set(self.params)
        if missing or extra:
            raise FormatError(f"readout state mismatch: missing {sorted(missing)}, "
                              f"unknown {sorted(extra)}")
        for name, arr in tensors.items():
            if self.params[name].data.shape != arr.shape:
                raise FormatError(f"readout tensor {name}: shape {arr.shape} != "
                                  f"{self.params[name].data.shape}")
            self.params[name].data = arr.astype(np.float32)


def fourier_encode(x: np.ndarray, n_freqs: int) -> np.ndarray:
    """Per-coordinate sin/cos features at octave frequencies pi * 2^j.

    (..., C) -> (..., 2 * C * n_freqs); the zero vector encodes to all-zero
    sines and all-one cosines.
    """
    x = np.asarray(x, dtype=np.float32)
    freqs = (np.pi * (2.0 ** np.arange(n_freqs))).astype(np.float32)
    ang = x[..., None] * freqs                       # (..., C, F)
    feats = np.concatenate([np.sin(ang), np.cos(ang)], axis=-1)
    return feats.reshape(*x.shape[:-1], 2 * x.shape[-1] * n_freqs)


def attention_pool(q: ng.Tensor, k: ng.Tensor, v: ng.Tensor, heads: int) -> ng.Tensor:
    """Single-query multi-head pooling with order-canonical summation.

    q: (d,); k, v: (..., N, d). Softmax denominators and the weighted value
    sums add their terms in sorted order, so the result is bitwise invariant
    under any permutation of the N tokens. Returns (..., d).
    """
    d = q.data.shape[-1]
    if d % heads or k.data.shape != v.data.shape or k.data.shape[-1] != d:
        raise ng.ShapeError(f"attention_pool shapes q{q.data.shape} k{k.data.shape}")
    dh = d // heads
    scale = 1.0 / math.sqrt(dh)
    lead = k.data.shape[:-2]
    N = k.data.shape[-2]
    qh = q.data.reshape(heads, dh)
    kh = k.data.reshape(*lead, N, heads, dh)
    vh = v.data.reshape(*lead, N, heads, dh)

    scores = np.einsum("...nhd,hd->...nh", kh, qh) * scale
    m = scores.max(axis=-2, keepdims=True)
    e = np.exp(scores - m)
    denom = np.sort(e, axis=-2).sum(axis=-2, keepdims=True)
    w = e / denom                                     # (..., N, h)
    terms = w[..., None] * vh                         # (..., N, h, dh)
    pooled = np.sort(terms, axis=-3).sum(axis=-3)     # (..., h, dh)
    out = pooled.reshape(*lead, d)

    def backward(g):
        gh = g.reshape(*lead, heads, dh)
        gv = (w[..., None] * gh[..., None, :, :]).reshape(v.data.shape)
        gw = np.einsum("...nhd,...hd->...nh", vh, gh)
        gs = w * (gw - (w * gw).sum(axis=-2, keepdims=True))
        gq = (np.einsum("...nh,...nhd->hd", gs, kh) * scale).reshape(q.data.shape)
        gk = (gs[..., None] * qh * scale).reshape(k.data.shape)
        return gq, gk, gv

    return ng.record(out, (q, k, v), backward)


class CrossAttention(ParamBag):
    """Multi-head cross-attention: queries (B, nq, dq) read kv (B, nk, dkv)."""

    kind = "cross_attention"

    def __init__(self, dq: int, dkv: int, width: int, heads: int,
                 rng: np.random.Generator):
        super().__init__()
        if width % heads:
            raise ValueError("attention width must divide into heads")
        self.dq, self.dkv, self.width, self.heads = dq, dkv, width, heads

        def normal(*shape, std=0.02):
            return (rng.standard_normal(shape) * std).astype(np.float32)

        self.add("wq", normal(dq, width))
        self.add("wk", normal(dkv, width))
        self.add("wv", normal(dkv, width))
        self.add("wo", normal(width, dq))
        for nm, dim in (("bq", width), ("bk", width), ("bv", width), ("bo", dq)):
            self.add(nm, np.zeros(dim, dtype=np.float32))

    def __call__(self, q: ng.Tensor, kv: ng.Tensor) -> ng.Tensor:
        B, nq, _ = q.data.shape
        nk = kv.data.shape[1]
        H = self.heads
        dh = self.width // H
        P = self.params

        def heads_of(x, n):
            x = ng.reshape(x, (B, n, H, dh))
            return ng.transpose(x, (0, 2, 1, 3))

        qp = heads_of(ng.linear(q, P["wq"], P["bq"]), nq)
        kp = heads_of(ng.linear(kv, P["wk"], P["bk"]), nk)
        vp = heads_of(ng.linear(kv, P["wv"], P["bv"]), nk)
        o = ng.sdpa(qp, kp, vp)
        o = ng.reshape(ng.transpose(o, (0, 2, 1, 3)), (B, nq, self.width))
        return ng.linear(o, P["wo"], P["bo"])


_HEAD_REGISTRY: dict[str, type] = {}


def register_head(cls):
    _HEAD_REGISTRY[cls.kind] = cls
    return cls


def save_readout(head: ParamBag, path: str, extra_config: Optional[dict] = None) -> None:
    tensors = {f"readout.{k}": v.data for k, v in head.params.items()}
    config = {"readout.kind": head.kind}
    config.update({f"readout.arg.{k}": v for k, v in head.config.items()})
    if extra_config:
        config.update(extra_config)
    write_tensors(path, tensors, config)


def load_readout(path: str) -> tuple[ParamBag, dict]:
    tensors, config = read_tensors(path)
    kind = config.get("readout.kind")
    if kind not in _HEAD_REGISTRY:
        raise FormatError(f"{path}: unknown readout kind {kind!r}")
    args = {}
    for k, v in config.items():
        if k.startswith("readout.arg."):
            name = k[len("readout.arg."):]
            args[name] = _coerce(v)
    head = _HEAD_REGISTRY[kind](**args)
    head.load_state({k[len("readout."):]: v for k, v in tensors.items()
                     if k.startswith("readout.")})
    extra = {k: v for k, v in config.items() if not k.startswith("readout.")}
    return head, extra


def _coerce(v: str):
    for cast in (int, float):
        try:
            return cast(v)
        except ValueError:
            continue
    return v
