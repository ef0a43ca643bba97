"""Per-pixel depth decoder: Fourier-encoded queries cross-attend to tokens.

Each query decodes independently; there is no attention between pixels.
"""

from __future__ import annotations

from typing import Optional

import numpy as np

from .. import ndgrad as ng
from ..errors import ValidationError
from .common import CrossAttention, ParamBag, fourier_encode, register_head

__all__ = ["DepthHead", "depth_decode", "latent_grid_queries"]


def latent_grid_queries(h: int, w: int) -> np.ndarray:
    """Cell-center coordinates of the latent grid in [0, 1]^2, row-major."""
    ys = (np.arange(h) + 0.5) / h
    xs = (np.arange(w) + 0.5) / w
    gx, gy = np.meshgrid(xs, ys)
    return np.stack([gx, gy], axis=-1).reshape(-1, 2).astype(np.float32)


@register_head
class DepthHead(ParamBag):
    kind = "depth"

    def __init__(self, dim: int = 128, heads: int = 2, mlp_hidden: int = 128,
                 n_layers: int = 1, n_freqs: int = 6, seed: int = 0):
        super().__init__()
        self.config = dict(dim=dim, heads=heads, mlp_hidden=mlp_hidden,
                           n_layers=n_layers, n_freqs=n_freqs, seed=seed)
        self.dim, self.n_layers, self.n_freqs = dim, n_layers, n_freqs
        rng = np.random.default_rng(np.random.SeedSequence([seed, 0xDE87]))

        def normal(*shape, std=0.02):
            return (rng.standard_normal(shape) * std).astype(np.float32)

        fdim = 4 * n_freqs
        self.add("enc.w", normal(fdim, dim, std=1.0 / np.sqrt(fdim)))
        self.add("enc.b", np.zeros(dim, dtype=np.float32))
        self.layers = []
        for i in range(n_layers):
            ca = CrossAttention(dim, dim, dim, heads, rng)
            self.adopt(f"layer{i}.ca", ca)
            self.layers.append(ca)
            p = f"layer{i}."
            self.add(p + "ln1.g", np.ones(dim, dtype=np.float32))
            self.add(p + "ln1.b", np.zeros(dim, dtype=np.float32))
            self.add(p + "mlp.w1", normal(dim, mlp_hidden))
            self.add(p + "mlp.b1", np.zeros(mlp_hidden, dtype=np.float32))
            self.add(p + "mlp.w2", normal(mlp_hidden, dim))
            self.add(p + "mlp.b2", np.zeros(dim, dtype=np.float32))
            self.add(p + "ln2.g", np.ones(dim, dtype=np.float32))
            self.add(p + "ln2.b", np.zeros(dim, dtype=np.float32))
        self.add("out.ln.g", np.ones(dim, dtype=np.float32))
        self.add("out.ln.b", np.zeros(dim, dtype=np.float32))
        self.add("out.w", normal(dim, 1))
        self.add("out.b", np.zeros(1, dtype=np.float32))

    def forward(self, tokens, pixels: np.ndarray) -> ng.Tensor:
        """tokens (B, N, d) or (N, d); pixels (P, 2) in [0,1] -> depth (B, P) / (P,)."""
        pixels = np.asarray(pixels, dtype=np.float32)
        if pixels.ndim != 2 or pixels.shape[1] != 2:
            raise ValidationError("query pixels must be (P, 2)")
        if pixels.min() < 0.0 or pixels.max() > 1.0:
            raise ValidationError("query pixels must lie inside the unit square")
        P = self.params
        x = tokens if isinstance(tokens, ng.Tensor) else ng.const(tokens)
        squeeze = x.data.ndim == 2
        if squeeze:
            x = ng.reshape(x, (1,) + x.data.shape)
        B = x.data.shape[0]
        n_pix = pixels.shape[0]

        q = ng.linear(ng.const(fourier_encode(pixels, self.n_freqs)),
                      P["enc.w"], P["enc.b"])
        q = ng.expand(ng.reshape(q, (1, n_pix, self.dim)), (B, n_pix, self.dim))
        for i, ca in enumerate(self.layers):
            p = f"layer{i}."
            q = ng.add(q, ca(ng.layer_norm(q, P[p + "ln1.g"], P[p + "ln1.b"]), x))
            h = ng.layer_norm(q, P[p + "ln2.g"], P[p + "ln2.b"])
            q = ng.add(q, ng.linear(ng.gelu(ng.linear(h, P[p + "mlp.w1"], P[p + "mlp.b1"])),
                                    P[p + "mlp.w2"], P[p + "mlp.b2"]))
        d = ng.linear(ng.layer_norm(q, P["out.ln.g"], P["out.ln.b"]),
                      P["out.w"], P["out.b"])
        d = ng.reshape(d, (B, n_pix))
        return ng.reshape(d, (n_pix,)) if squeeze else d


def depth_decode(head: DepthHead, features, pixels: np.ndarray,
                 gt_depth: Optional[np.ndarray] = None
                 ) -> tuple[ng.Tensor, Optional[ng.Tensor]]:
    """Decode per-pixel depth; with ground truth, also the mean L2 loss."""
    pred = head.forward(features, pixels)
    if gt_depth is None:
        return pred, None
    gt = ng.const(np.asarray(gt_depth, dtype=np.float32).reshape(pred.data.shape))
    return pred, ng.mse(pred, gt)
