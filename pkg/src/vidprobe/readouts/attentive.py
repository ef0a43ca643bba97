"""Attentive readout: learnable query pools frozen tokens, MLP classifies."""

from __future__ import annotations

from typing import Optional

import numpy as np

from .. import ndgrad as ng
from ..errors import ValidationError
from .common import ParamBag, attention_pool, register_head

__all__ = ["AttentiveHead", "attentive_classify"]


@register_head
class AttentiveHead(ParamBag):
    """Cross-attention pooling + two-layer GeLU MLP + layer norm + linear.

    The pooled vector is added to the query token, the MLP output to its own
    input; logits never depend on token order (bitwise).
    """

    kind = "attentive"

    def __init__(self, dim: int = 128, n_out: int = 10, heads: int = 4,
                 mlp_hidden: int = 512, seed: int = 0):
        super().__init__()
        self.config = dict(dim=dim, n_out=n_out, heads=heads,
                           mlp_hidden=mlp_hidden, seed=seed)
        self.dim, self.n_out, self.heads = dim, n_out, heads
        rng = np.random.default_rng(np.random.SeedSequence([seed, 0xA77E]))

        def normal(*shape, std=0.02):
            return (rng.standard_normal(shape) * std).astype(np.float32)

        self.add("query", normal(dim))
        for nm in ("wq", "wk", "wv", "wo"):
            self.add(nm, normal(dim, dim))
        for nm in ("bq", "bk", "bv", "bo"):
            self.add(nm, np.zeros(dim, dtype=np.float32))
        self.add("mlp.w1", normal(dim, mlp_hidden))
        self.add("mlp.b1", np.zeros(mlp_hidden, dtype=np.float32))
        self.add("mlp.w2", normal(mlp_hidden, dim))
        self.add("mlp.b2", np.zeros(dim, dtype=np.float32))
        self.add("ln.g", np.ones(dim, dtype=np.float32))
        self.add("ln.b", np.zeros(dim, dtype=np.float32))
        self.add("cls.w", normal(dim, n_out))
        self.add("cls.b", np.zeros(n_out, dtype=np.float32))

    def forward(self, tokens) -> ng.Tensor:
        """tokens (N, d) or (B, N, d) -> logits (n_out,) or (B, n_out)."""
        P = self.params
        x = tokens if isinstance(tokens, ng.Tensor) else ng.const(tokens)
        squeeze = x.data.ndim == 2
        if squeeze:
            x = ng.reshape(x, (1,) + x.data.shape)
        B, N, _ = x.data.shape

        qv = ng.reshape(ng.linear(ng.reshape(P["query"], (1, self.dim)),
                                  P["wq"], P["bq"]), (self.dim,))
        k = ng.linear(x, P["wk"], P["bk"])
        v = ng.linear(x, P["wv"], P["bv"])
        pooled = attention_pool(qv, k, v, self.heads)           # (B, d)
        a = ng.add(ng.linear(pooled, P["wo"], P["bo"]), P["query"])
        h = ng.add(ng.linear(ng.gelu(ng.linear(a, P["mlp.w1"], P["mlp.b1"])),
                             P["mlp.w2"], P["mlp.b2"]), a)
        logits = ng.linear(ng.layer_norm(h, P["ln.g"], P["ln.b"]),
                           P["cls.w"], P["cls.b"])
        return ng.reshape(logits, (self.n_out,)) if squeeze else logits


def attentive_classify(head: AttentiveHead, features, labels: Optional[np.ndarray] = None
                       ) -> tuple[ng.Tensor, Optional[ng.Tensor]]:
    """Logits plus, when labels are given, the mean softmax cross-entropy."""
    logits = head.forward(features)
    if labels is None:
        return logits, None
    labels = np.atleast_1d(np.asarray(labels, dtype=np.intp))
    if labels.min() < 0 or labels.max() >= head.n_out:
        raise ValidationError(f"label outside [0, {head.n_out})")
    view = logits if logits.data.ndim == 2 else ng.reshape(logits, (1, head.n_out))
    return logits, ng.softmax_cross_entropy(view, labels)
