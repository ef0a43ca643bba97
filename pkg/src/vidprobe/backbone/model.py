"""Windowed-attention latent denoising transformer.

Token layout: index 0 is the condition token (learned null embedding plus a
timestep encoding); indices 1.. are latent-grid tokens, frame-major. The
condition token is readable from every window but only ever attends to
itself, so image-mode per-frame independence holds bitwise.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import ndgrad as ng
from ..errors import ValidationError
from .config import IDENTITY, SPATIAL, SPATIO_TEMPORAL, BackboneConfig
from .schedule import NoiseSchedule, forward_noise_batch
from .tokenizer import init_tokenizer_params, tokenize, tokenize_batch

__all__ = ["BackboneModel", "WindowLayout", "denoise_loss"]


@dataclass(frozen=True)
class WindowLayout:
    """Precomputed gather indices realizing one block's attention windows."""

    kind: str
    n_windows: int
    window_size: int
    q_idx: np.ndarray       # (n_windows * window_size,) grid-token gather order
    kv_idx: np.ndarray      # (n_windows * kv_size,) keys per window (may add cond)
    inv_idx: np.ndarray     # window-ordered outputs -> token order
    kv_size: int


def _build_layout(config: BackboneConfig, kind: str) -> WindowLayout:
    F, h, w = config.latent_frames, config.latent_h, config.latent_w
    tok = lambda f, y, x: 1 + (f * h + y) * w + x
    windows: list[list[int]] = []
    if kind == SPATIAL:
        for f in range(F):
            windows.append([tok(f, y, x) for y in range(h) for x in range(w)])
    elif kind == SPATIO_TEMPORAL:
        t = config.window_tile
        for ty in range(h // t):
            for tx in range(w // t):
                windows.append([tok(f, ty * t + dy, tx * t + dx)
                                for f in range(F) for dy in range(t) for dx in range(t)])
    elif kind == IDENTITY:
        windows = [[tok(f, y, x)] for f in range(F) for y in range(h) for x in range(w)]
    else:
        raise ValidationError(f"unknown window kind {kind!r}")

    ws = len(windows[0])
    q_idx = np.array([i for win in windows for i in win], dtype=np.intp)
    if kind == IDENTITY:
        kv = [[i] for win in windows for i in win]
    else:
        kv = [win + [0] for win in windows]
    kv_idx = np.array([i for win in kv for i in win], dtype=np.intp)
    inv = np.empty(q_idx.size, dtype=np.intp)
    inv[q_idx - 1] = np.arange(q_idx.size)
    return WindowLayout(kind, len(windows), ws, q_idx, kv_idx, inv, len(kv[0]))


def _layout_mask(config: BackboneConfig, layout: WindowLayout) -> np.ndarray:
    """Full (1+N, 1+N) boolean mask equivalent to the partitioned windows."""
    n = 1 + config.grid_tokens
    mask = np.zeros((n, n), dtype=bool)
    mask[0, 0] = True
    ws, kvs = layout.window_size, layout.kv_size
    for wi in range(layout.n_windows):
        rows = layout.q_idx[wi * ws:(wi + 1) * ws]
        cols = layout.kv_idx[wi * kvs:(wi + 1) * kvs]
        mask[np.ix_(rows, cols)] = True
    return mask


def _time_features(t: np.ndarray, n_freqs: int) -> np.ndarray:
    """Sinusoidal features of t in [0, 1], octave-spaced frequencies."""
    t = np.asarray(t, dtype=np.float32).reshape(-1, 1)
    freqs = (2.0 ** np.arange(n_freqs, dtype=np.float32)) * np.float32(np.pi)
    ang = t * freqs
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=1).astype(np.float32)


class BackboneModel:
    """Tokenizer + Block-0 embedding + L window-attention blocks + eps head."""

    def __init__(self, config: BackboneConfig, seed: int = 0):
        self.config = config
        self.seed = seed
        self.schedule = NoiseSchedule(t_steps=config.t_steps)
        self.params: dict[str, ng.Tensor] = {}
        self._fixed = set()
        self._init_params(seed)
        self._layouts = {kind: _build_layout(config, kind)
                         for kind in (SPATIAL, SPATIO_TEMPORAL, IDENTITY)}

    # ------------------------------------------------------------- params
    def _add(self, name: str, arr: np.ndarray, fixed: bool = False) -> None:
        self.params[name] = ng.Tensor(arr, requires_grad=not fixed)
        if fixed:
            self._fixed.add(name)

    def _init_params(self, seed: int) -> None:
        cfg = self.config
        rng = np.random.default_rng(np.random.SeedSequence([seed, 0xB0DE]))
        d, c = cfg.embed_dim, cfg.latent_channels
        hidden = cfg.mlp_ratio * d

        def normal(*shape, std=0.02):
            return (rng.standard_normal(shape) * std).astype(np.float32)

        for name, arr in init_tokenizer_params(cfg, seed).items():
            self._add(name, arr, fixed=True)

        self._add("embed.w", normal(c, d, std=1.0 / np.sqrt(c)))
        self._add("embed.b", np.zeros(d, dtype=np.float32))
        self._add("pos", normal(cfg.grid_tokens, d))
        self._add("cond", normal(d))
        self._add("time.w", normal(2 * cfg.time_freqs, d))
        self._add("time.b", np.zeros(d, dtype=np.float32))
        for b in range(1, cfg.blocks + 1):
            p = f"block{b}."
            self._add(p + "ln1.g", np.ones(d, dtype=np.float32))
            self._add(p + "ln1.b", np.zeros(d, dtype=np.float32))
            for nm in ("wq", "wk", "wv", "wo"):
                self._add(p + f"attn.{nm}", normal(d, d, std=0.02))
            for nm in ("bq", "bk", "bv", "bo"):
                self._add(p + f"attn.{nm}", np.zeros(d, dtype=np.float32))
            self._add(p + "ln2.g", np.ones(d, dtype=np.float32))
            self._add(p + "ln2.b", np.zeros(d, dtype=np.float32))
            self._add(p + "mlp.w1", normal(d, hidden, std=0.02))
            self._add(p + "mlp.b1", np.zeros(hidden, dtype=np.float32))
            self._add(p + "mlp.w2", normal(hidden, d, std=0.02))
            self._add(p + "mlp.b2", np.zeros(d, dtype=np.float32))
        self._add("out.ln.g", np.ones(d, dtype=np.float32))
        self._add("out.ln.b", np.zeros(d, dtype=np.float32))
        # zero-init head: the fresh model predicts eps = 0
        self._add("out.w", np.zeros((d, c), dtype=np.float32))
        self._add("out.b", np.zeros(c, dtype=np.float32))

    def trainable(self) -> dict[str, ng.Tensor]:
        return {k: v for k, v in self.params.items() if k not in self._fixed}

    def parameter_count(self) -> int:
        return sum(int(p.data.size) for p in self.params.values())

    # ----------------------------------------------------------- tokenize
    def tokenize(self, video: np.ndarray) -> np.ndarray:
        tok = {k: self.params[k].data for k in self._fixed}
        return tokenize(video, tok, self.config)

    def tokenize_batch(self, videos: np.ndarray) -> np.ndarray:
        tok = {k: self.params[k].data for k in self._fixed}
        return tokenize_batch(videos, tok, self.config)

    # ------------------------------------------------------------ forward
    def block_layout(self, block: int) -> WindowLayout:
        return self._layouts[self.config.window_kind(block)]

    def block_mask(self, block: int) -> np.ndarray:
        return _layout_mask(self.config, self.block_layout(block))

    def _windowed_attention(self, q, k, v, layout: WindowLayout):
        cfg = self.config
        B = q.shape[0]
        H, dh = cfg.heads, cfg.head_dim
        nw, ws = layout.n_windows, layout.window_size
        with_cond = layout.kv_size == ws + 1

        def to_heads(x):
            x = ng.index_select(x, layout.q_idx, axis=1)
            x = ng.reshape(x, (B, nw, ws, H, dh))
            return ng.transpose(x, (0, 1, 3, 2, 4))

        def cond_heads(x):
            c = ng.reshape(ng.slice_axis(x, 1, 0, 1), (B, 1, H, 1, dh))
            return ng.expand(c, (B, nw, H, 1, dh))

        qw = to_heads(q)
        kw, vw = to_heads(k), to_heads(v)
        if with_cond:
            kw = ng.concat([kw, cond_heads(k)], axis=3)
            vw = ng.concat([vw, cond_heads(v)], axis=3)
        ow = ng.sdpa(qw, kw, vw)
        ow = ng.transpose(ow, (0, 1, 3, 2, 4))
        ow = ng.reshape(ow, (B, nw * ws, H * dh))
        grid_out = ng.index_select(ow, layout.inv_idx, axis=1)
        # the condition token only attends to itself: softmax over one key
        # is exactly its value row
        cond_out = ng.slice_axis(v, 1, 0, 1)
        return ng.concat([cond_out, grid_out], axis=1)

    def _masked_attention(self, q, k, v, block: int):
        """Reference route: full-sequence attention under the window mask."""
        cfg = self.config
        B = q.shape[0]
        H, dh = cfg.heads, cfg.head_dim
        n = 1 + cfg.grid_tokens

        def to_heads(x):
            x = ng.reshape(x, (B, n, H, dh))
            return ng.transpose(x, (0, 2, 1, 3))

        out = ng.sdpa(to_heads(q), to_heads(k), to_heads(v), mask=self.block_mask(block))
        out = ng.transpose(out, (0, 2, 1, 3))
        return ng.reshape(out, (B, n, H * dh))

    def forward(self, z_t: np.ndarray, t: np.ndarray, capture: int | None = None,
                attention_route: str = "windowed"):
        """Predict the injected noise; optionally capture one block's output.

        z_t: (B, 1+m, h, w, c); t: (B,) in [0, 1]. Returns (eps_hat, features)
        where features is (B, latent_frames, tokens, d) after block ``capture``
        or None.
        """
        cfg = self.config
        P = self.params
        if capture is not None and not (1 <= capture <= cfg.blocks):
            raise ValidationError(f"capture block {capture} outside [1, {cfg.blocks}]")
        z_t = np.asarray(z_t, dtype=np.float32)
        expect = (cfg.latent_frames, cfg.latent_h, cfg.latent_w, cfg.latent_channels)
        if z_t.shape[1:] != expect:
            raise ValidationError(f"latent shape {z_t.shape[1:]} != {expect}")
        B = z_t.shape[0]
        N = cfg.grid_tokens

        x = ng.const(z_t.reshape(B, N, cfg.latent_channels))
        x = ng.linear(x, P["embed.w"], P["embed.b"])
        x = ng.add(x, P["pos"])

        temb = ng.linear(ng.const(_time_features(t, cfg.time_freqs)), P["time.w"], P["time.b"])
        cond = ng.reshape(ng.add(temb, P["cond"]), (B, 1, cfg.embed_dim))
        x = ng.concat([cond, x], axis=1)

        features = None
        for b in range(1, cfg.blocks + 1):
            p = f"block{b}."
            h = ng.layer_norm(x, P[p + "ln1.g"], P[p + "ln1.b"])
            q = ng.linear(h, P[p + "attn.wq"], P[p + "attn.bq"])
            k = ng.linear(h, P[p + "attn.wk"], P[p + "attn.bk"])
            v = ng.linear(h, P[p + "attn.wv"], P[p + "attn.bv"])
            if attention_route == "windowed":
                att = self._windowed_attention(q, k, v, self.block_layout(b))
            elif attention_route == "masked":
                att = self._masked_attention(q, k, v, b)
            else:
                raise ValidationError(f"unknown attention route {attention_route!r}")
            x = ng.add(x, ng.linear(att, P[p + "attn.wo"], P[p + "attn.bo"]))
            h2 = ng.layer_norm(x, P[p + "ln2.g"], P[p + "ln2.b"])
            y = ng.linear(ng.gelu(ng.linear(h2, P[p + "mlp.w1"], P[p + "mlp.b1"])),
                          P[p + "mlp.w2"], P[p + "mlp.b2"])
            x = ng.add(x, y)
            if capture == b:
                grid = ng.slice_axis(x, 1, 1, 1 + N)
                features = ng.reshape(
                    grid, (B, cfg.latent_frames, cfg.tokens_per_frame, cfg.embed_dim))

        y = ng.layer_norm(x, P["out.ln.g"], P["out.ln.b"])
        grid = ng.slice_axis(y, 1, 1, 1 + N)
        eps = ng.linear(grid, P["out.w"], P["out.b"])
        eps = ng.reshape(eps, (B,) + expect)
        return eps, features

    def denoise_loss(self, z0: np.ndarray, rng: np.random.Generator) -> ng.Tensor:
        return denoise_loss(self, z0, rng)


def denoise_loss(model, z0: np.ndarray, rng: np.random.Generator) -> ng.Tensor:
    """Mean squared error between injected and predicted noise.

    t ~ U(0,1) and eps ~ N(0,I) per sample; the condition slot always carries
    the learned null embedding. ``model`` needs ``.forward`` and ``.schedule``.
    """
    z0 = np.asarray(z0, dtype=np.float32)
    if z0.ndim != 5 or z0.shape[0] == 0:
        raise ValidationError("denoise_loss expects a non-empty latent batch")
    t = rng.uniform(0.0, 1.0, size=z0.shape[0])
    eps = rng.standard_normal(z0.shape).astype(np.float32)
    z_t = forward_noise_batch(z0, t, eps, model.schedule)
    eps_hat, _ = model.forward(z_t, t)
    return ng.mse(eps_hat, ng.const(eps))
