"""U-Net with multi-temporal attention.

Activations inside the encoder and decoder use the layout ``(B*T, C, H, W)``
so every date goes through the same convolution weights. The attention
block reshapes to one ``T x T`` (or ``1 x T``) matrix per batch element,
head and low-resolution pixel.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from ..errors import DimensionError, InputError
from ..tensor import ops
from ..tensor.autodiff import WORKING_DTYPE, Tensor, as_tensor
from .config import ModelConfig


def positional_encode(days: Sequence[int], dim: int, period: float = 10000.0) -> np.ndarray:
    """Sinusoidal encoding of acquisition-day offsets, shape ``(T, dim)``.

    Even columns hold ``sin(day / period**(2i/dim))``, odd columns the
    matching cosine.
    """
    days = np.asarray(days, dtype=np.float64)
    if days.ndim != 1:
        raise InputError("days must be a 1-d sequence")
    if np.any(days < 0):
        raise InputError("days must be nonnegative")
    if np.any(np.diff(days) <= 0):
        raise InputError("days must be strictly increasing")
    if dim % 2:
        raise InputError("encoding dimension must be even")
    freq = period ** (-np.arange(0, dim, 2, dtype=np.float64) / dim)
    angles = days[:, None] * freq[None, :]
    pe = np.empty((days.size, dim), dtype=np.float64)
    pe[:, 0::2] = np.sin(angles)
    pe[:, 1::2] = np.cos(angles)
    return pe


def init_params(config: ModelConfig, seed: Optional[int] = None, dtype=WORKING_DTYPE) -> dict:
    """Fresh parameters, He-normal convolutions and unit group-norm affines."""
    rng = np.random.default_rng(config.seed if seed is None else seed)
    c = config.channels
    p: dict[str, np.ndarray] = {}

    def conv(name, ci, co, k):
        p[f"{name}.w"] = rng.normal(0.0, math.sqrt(2.0 / (ci * k * k)), (co, ci, k, k))
        p[f"{name}.b"] = np.zeros(co)

    def norm(name, ch):
        p[f"{name}.g"] = np.ones(ch)
        p[f"{name}.b"] = np.zeros(ch)

    conv("enc.0.conv", config.in_channels, c[0], 3)
    norm("enc.0.norm", c[0])
    for lvl in range(1, config.levels):
        conv(f"enc.{lvl}.down", c[lvl - 1], c[lvl], 3)
        norm(f"enc.{lvl}.down_norm", c[lvl])
        conv(f"enc.{lvl}.conv", c[lvl], c[lvl], 3)
        norm(f"enc.{lvl}.norm", c[lvl])

    h, d, dh = config.heads, config.key_dim, config.head_dim
    p["attn.key.w"] = rng.normal(0.0, 1.0 / math.sqrt(dh), (h, d, dh))
    p["attn.key.b"] = np.zeros((h, d))
    if config.variant == "ltae":
        p["attn.query"] = rng.normal(0.0, 1.0, (h, d))
    else:
        p["attn.query.w"] = rng.normal(0.0, 1.0 / math.sqrt(dh), (h, d, dh))
        p["attn.query.b"] = np.zeros((h, d))

    for lvl in range(config.levels - 2, -1, -1):
        p[f"dec.{lvl}.up.w"] = rng.normal(0.0, math.sqrt(2.0 / (c[lvl + 1] * 4)), (c[lvl + 1], c[lvl], 2, 2))
        p[f"dec.{lvl}.up.b"] = np.zeros(c[lvl])
        conv(f"dec.{lvl}.conv", 2 * c[lvl], c[lvl], 3)
        norm(f"dec.{lvl}.norm", c[lvl])
    conv("head", c[0], config.n_classes, 1)
    return {k: v.astype(dtype) for k, v in p.items()}


@dataclass
class AttentionMaps:
    """Temporal attention weights for one level, layout ``(B, heads, T_out, T, H, W)``.

    ``T_out`` is ``T`` for the multi-temporal variant and 1 for the
    collapsing ones. Rows (the ``T`` axis) are probability vectors.
    """

    weights: Tensor

    @property
    def shape(self):
        return self.weights.shape


class TemporalAttentionUNet:
    """The network as a bundle of configuration and named parameter tensors.

    ``params`` holds plain arrays; the forward pass wraps them (or the
    leaves passed via ``bind``) as tensors.
    """

    def __init__(self, config: ModelConfig, params: Optional[dict] = None):
        self.config = config
        self.params = init_params(config) if params is None else dict(params)
        self._bound: dict[str, Tensor] = {}

    # parameter plumbing -------------------------------------------------
    def bind(self, tensors: dict[str, Tensor]) -> None:
        """Use the given leaf tensors in place of ``params`` (gradient recording)."""
        self._bound = dict(tensors)

    def unbind(self) -> None:
        self._bound = {}

    def leaf_tensors(self, dtype=None) -> dict[str, Tensor]:
        return {k: Tensor(v if dtype is None else v.astype(dtype), requires_grad=True)
                for k, v in self.params.items()}

    def p(self, name: str) -> Tensor:
        t = self._bound.get(name)
        return t if t is not None else Tensor(self.params[name])

    def n_parameters(self) -> int:
        return int(sum(v.size for v in self.params.values()))

    # building blocks ----------------------------------------------------
    def _conv_norm_relu(self, x, name, norm, stride=1):
        y = ops.conv2d(x, self.p(f"{name}.w"), self.p(f"{name}.b"), stride=stride, padding=1)
        y = ops.group_norm(y, self.config.norm_groups, self.p(f"{norm}.g"), self.p(f"{norm}.b"))
        return ops.relu(y)

    def _check_input(self, x: Tensor) -> tuple[int, int, int, int, int]:
        if x.ndim != 5:
            raise DimensionError(f"expected input B,T,C,H,W, got {x.shape}")
        b, t, c, h, w = x.shape
        cfg = self.config
        if c != cfg.in_channels:
            raise DimensionError(f"input has {c} channels (axis C), model expects {cfg.in_channels}")
        m = cfg.spatial_multiple
        if h % m or w % m:
            raise InputError(f"spatial extents {h}x{w} must be divisible by {m}")
        if t > cfg.t_max:
            raise InputError(f"sequence length {t} exceeds t_max={cfg.t_max}")
        return b, t, c, h, w

    # forward stages -----------------------------------------------------
    def encode(self, x: Tensor) -> list[Tensor]:
        """Feature maps ``f^1 .. f^L``, each ``(B*T, C_l, H / 2**(l-1), W / 2**(l-1))``."""
        b, t, c, h, w = self._check_input(x)
        y = ops.reshape(x, (b * t, c, h, w))
        feats = [self._conv_norm_relu(y, "enc.0.conv", "enc.0.norm")]
        for lvl in range(1, self.config.levels):
            y = self._conv_norm_relu(feats[-1], f"enc.{lvl}.down", f"enc.{lvl}.down_norm", stride=2)
            y = self._conv_norm_relu(y, f"enc.{lvl}.conv", f"enc.{lvl}.norm")
            feats.append(y)
        return feats

    def add_positional_encoding(self, f_last: Tensor, days: np.ndarray) -> Tensor:
        """``f^L + PE(days)``, returned as ``(B, T, D, H', W')``."""
        days = np.atleast_2d(np.asarray(days))
        b, t = days.shape
        n, dim, hh, ww = f_last.shape
        if n != b * t:
            raise DimensionError(f"days describe {b}x{t} images, features hold {n}")
        pe = np.stack([positional_encode(row, dim, self.config.pe_period) for row in days])
        pe = Tensor(pe.astype(f_last.dtype).reshape(b, t, dim, 1, 1))
        return ops.add(ops.reshape(f_last, (b, t, dim, hh, ww)), pe)

    def _project(self, x: Tensor, name: str) -> Tensor:
        # x: (B, H, W, h, T, Dh) -> (B, H, W, h, T, d)
        h, d, dh = self.config.heads, self.config.key_dim, self.config.head_dim
        w = ops.reshape(ops.transpose(self.p(f"{name}.w"), (0, 2, 1)), (1, 1, 1, h, dh, d))
        bias = ops.reshape(self.p(f"{name}.b"), (1, 1, 1, h, 1, d))
        return ops.add(ops.batched_matmul(x, w), bias)

    def attend(self, f_in: Tensor) -> AttentionMaps:
        """Attention at the deepest level from ``(B, T, D, H', W')`` features."""
        cfg = self.config
        b, t, dim, hh, ww = f_in.shape
        if dim != cfg.feature_size:
            raise DimensionError(f"attention input has {dim} channels, expected {cfg.feature_size}")
        h, dh = cfg.heads, cfg.head_dim
        # (B, T, h, Dh, H, W) -> (B, H, W, h, T, Dh)
        x = ops.transpose(ops.reshape(f_in, (b, t, h, dh, hh, ww)), (0, 4, 5, 2, 1, 3))
        keys = self._project(x, "attn.key")
        scale = math.sqrt(cfg.key_dim)
        if cfg.variant == "ours":
            queries = self._project(x, "attn.query")
            raw = ops.batched_matmul(keys, ops.transpose(queries, (0, 1, 2, 3, 5, 4)))
        else:
            if cfg.variant == "tae":
                pooled = ops.mean(x, axis=4, keepdims=True)
                queries = self._project(pooled, "attn.query")
            else:
                queries = ops.reshape(self.p("attn.query"), (1, 1, 1, h, 1, cfg.key_dim))
            raw = ops.batched_matmul(queries, ops.transpose(keys, (0, 1, 2, 3, 5, 4)))
        att = ops.softmax_axis(raw, axis=-1, temperature=scale)
        # (B, H, W, h, To, T) -> (B, h, To, T, H, W)
        return AttentionMaps(ops.transpose(att, (0, 3, 4, 5, 1, 2)))

    def propagate_attention(self, top: AttentionMaps) -> list[AttentionMaps]:
        """Attention for levels ``1 .. L``; level ``l`` is upsampled by ``2**(L-l)``."""
        levels = self.config.levels
        return [AttentionMaps(ops.upsample_bilinear(top.weights, 2 ** (levels - 1 - i)))
                if i < levels - 1 else top for i in range(levels)]

    def apply_attention(self, att: AttentionMaps, feats: Tensor, batch: int) -> Tensor:
        """Per-head weighted sum over input dates; returns ``(B*T_out, C, H, W)``."""
        return apply_attention(att.weights, feats, batch, self.config.heads)

    def decode(self, fbar: list[Tensor], batch: int) -> Tensor:
        """Segmentation logits ``(B, T_out, K, H, W)`` from attended features."""
        cfg = self.config
        y = fbar[-1]
        for lvl in range(cfg.levels - 2, -1, -1):
            skip = fbar[lvl]
            up = ops.conv_transpose2d(y, self.p(f"dec.{lvl}.up.w"), stride=2, bias=self.p(f"dec.{lvl}.up.b"))
            if up.shape != skip.shape:
                raise DimensionError(f"decoder level {lvl}: upsampled {up.shape} vs skip {skip.shape}")
            y = self._conv_norm_relu(ops.concat([skip, up], axis=1), f"dec.{lvl}.conv", f"dec.{lvl}.norm")
        logits = ops.conv2d(y, self.p("head.w"), self.p("head.b"))
        n, k, h, w = logits.shape
        return ops.reshape(logits, (batch, n // batch, k, h, w))

    def forward(self, x, days, return_attention: bool = False):
        """Logits for a batch ``(B, T, C, H, W)`` or a single series ``(T, C, H, W)``."""
        x = as_tensor(x)
        single = x.ndim == 4
        if single:
            x = ops.reshape(x, (1,) + x.shape)
            days = np.asarray(days)[None]
        days = np.atleast_2d(np.asarray(days))
        b, t = x.shape[:2]
        if days.shape != (b, t):
            raise DimensionError(f"days shape {days.shape} does not match input B,T = {(b, t)}")
        feats = self.encode(x)
        top = self.attend(self.add_positional_encoding(feats[-1], days))
        maps = self.propagate_attention(top)
        fbar = [self.apply_attention(a, f, b) for a, f in zip(maps, feats)]
        out = self.decode(fbar, b)
        if single:
            out = ops.reshape(out, out.shape[1:])
        if return_attention:
            return out, maps
        return out

    __call__ = forward

    def predict_series(self, x, days) -> Tensor:
        """Per-date logits ``(B, T, K, H, W)`` for any variant.

        Collapsing variants see each date as its own length-1 sequence,
        the usual way a single-map model is run on a monthly series.
        """
        x = as_tensor(x)
        single = x.ndim == 4
        if single:
            x = ops.reshape(x, (1,) + x.shape)
            days = np.asarray(days)[None]
        days = np.atleast_2d(np.asarray(days))
        if self.config.collapses_time:
            b, t = x.shape[:2]
            out = self.forward(ops.reshape(x, (b * t, 1) + x.shape[2:]), days.reshape(b * t, 1))
            out = ops.reshape(out, (b, t) + out.shape[2:])
        else:
            out = self.forward(x, days)
        if single:
            out = ops.reshape(out, out.shape[1:])
        return out


def apply_attention(weights: Tensor, feats: Tensor, batch: int, heads: int) -> Tensor:
    """``fbar_t = sum_t' A[t, t'] * f_t'``, head ``i`` weighting channel slice ``i``.

    ``weights`` is ``(B, heads, T_out, T, H, W)`` and ``feats`` is
    ``(B*T, C, H, W)``.
    """
    weights, feats = as_tensor(weights), as_tensor(feats)
    b, h, to, t, hh, ww = weights.shape
    n, c, fh, fw = feats.shape
    if b != batch or n != b * t or (fh, fw) != (hh, ww) or h != heads:
        raise DimensionError(
            f"attention {weights.shape} incompatible with features {feats.shape} (batch {batch})"
        )
    if c % heads:
        raise DimensionError(f"{c} channels cannot be split over {heads} heads")
    a = ops.transpose(weights, (0, 4, 5, 1, 2, 3))  # B, H, W, h, To, T
    f = ops.reshape(feats, (b, t, heads, c // heads, hh, ww))
    f = ops.transpose(f, (0, 4, 5, 2, 1, 3))  # B, H, W, h, T, C/h
    out = ops.batched_matmul(a, f)  # B, H, W, h, To, C/h
    out = ops.transpose(out, (0, 4, 3, 5, 1, 2))  # B, To, h, C/h, H, W
    return ops.reshape(out, (b * to, c, hh, ww))


def forward(x, days, config: ModelConfig, params: dict) -> Tensor:
    return TemporalAttentionUNet(config, params).forward(x, days)
