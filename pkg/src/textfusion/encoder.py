"""Channel-independent patch encoder.

One shared encoder is applied per channel: a linear patch projection plus a
learned positional table, followed by pre-norm transformer blocks
(multi-head self-attention, feed-forward, residual connections). The output
matrix of per-patch representations doubles as key and value for the
downstream cross-attention.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .data import PatchConfig
from .errors import ShapeError
from .tensor import Tensor


@dataclass
class EncoderConfig:
    d_ts: int = 64
    n_layers: int = 2
    n_heads: int = 4
    d_ff: int = 128
    p_max: int = 3  # fits l=7 with the default PatchConfig
    patch: PatchConfig = field(default_factory=PatchConfig)
    activation: str = "gelu"
    dropout: float = 0.0

    def __post_init__(self):
        for name in ("d_ts", "n_heads", "d_ff", "p_max"):
            if getattr(self, name) < 1:
                raise ShapeError(f"{name} must be positive, got {getattr(self, name)}")
        if self.n_layers < 0:
            raise ShapeError(f"n_layers must be >= 0, got {self.n_layers}")
        if self.d_ts % self.n_heads != 0:
            raise ShapeError(f"d_ts={self.d_ts} not divisible by n_heads={self.n_heads}")
        if self.activation not in ("gelu", "relu"):
            raise ShapeError(f"activation must be gelu or relu, got {self.activation!r}")


@dataclass
class EncoderLayerParams:
    w_q: Tensor
    b_q: Tensor
    w_k: Tensor
    b_k: Tensor
    w_v: Tensor
    b_v: Tensor
    w_o: Tensor
    b_o: Tensor
    ln1_gain: Tensor
    ln1_bias: Tensor
    ln2_gain: Tensor
    ln2_bias: Tensor
    w_ff1: Tensor
    b_ff1: Tensor
    w_ff2: Tensor
    b_ff2: Tensor


@dataclass
class EncoderParams:
    w_patch: Tensor  # patch_len x d_ts
    b_patch: Tensor
    positions: Tensor  # p_max x d_ts
    layers: list[EncoderLayerParams]

    def named(self, prefix: str = "encoder") -> list[tuple[str, Tensor]]:
        out = [(f"{prefix}.w_patch", self.w_patch),
               (f"{prefix}.b_patch", self.b_patch),
               (f"{prefix}.positions", self.positions)]
        for i, layer in enumerate(self.layers):
            for fname in ("w_q", "b_q", "w_k", "b_k", "w_v", "b_v", "w_o", "b_o",
                          "ln1_gain", "ln1_bias", "ln2_gain", "ln2_bias",
                          "w_ff1", "b_ff1", "w_ff2", "b_ff2"):
                out.append((f"{prefix}.layer{i}.{fname}", getattr(layer, fname)))
        return out


def _uniform(rng: np.random.Generator, fan_in: int, *shape: int) -> Tensor:
    bound = 1.0 / math.sqrt(fan_in)
    return Tensor(rng.uniform(-bound, bound, shape), requires_grad=True)


def _zeros(*shape: int) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=True)


def _ones(*shape: int) -> Tensor:
    return Tensor(np.ones(shape), requires_grad=True)


def init_params(cfg: EncoderConfig, seed: int) -> EncoderParams:
    """Seeded init: weights uniform in [-1/sqrt(fan_in), +1/sqrt(fan_in)],
    biases zero, layer-norm gains one. The positional table uses fan_in d_ts.
    """
    rng = np.random.default_rng(seed)
    d, ff = cfg.d_ts, cfg.d_ff
    layers = []
    w_patch = _uniform(rng, cfg.patch.patch_len, cfg.patch.patch_len, d)
    positions = _uniform(rng, d, cfg.p_max, d)
    for _ in range(cfg.n_layers):
        layers.append(EncoderLayerParams(
            w_q=_uniform(rng, d, d, d), b_q=_zeros(d),
            w_k=_uniform(rng, d, d, d), b_k=_zeros(d),
            w_v=_uniform(rng, d, d, d), b_v=_zeros(d),
            w_o=_uniform(rng, d, d, d), b_o=_zeros(d),
            ln1_gain=_ones(d), ln1_bias=_zeros(d),
            ln2_gain=_ones(d), ln2_bias=_zeros(d),
            w_ff1=_uniform(rng, d, d, ff), b_ff1=_zeros(ff),
            w_ff2=_uniform(rng, ff, ff, d), b_ff2=_zeros(d),
        ))
    return EncoderParams(w_patch, _zeros(d), positions, layers)


def parameter_count(params: EncoderParams) -> int:
    return sum(t.size for _, t in params.named())


def _multi_head_self_attention(x: Tensor, layer: EncoderLayerParams,
                               n_heads: int, d_ts: int) -> Tensor:
    q = T.add(T.matmul(x, layer.w_q), layer.b_q)
    k = T.add(T.matmul(x, layer.w_k), layer.b_k)
    v = T.add(T.matmul(x, layer.w_v), layer.b_v)
    dh = d_ts // n_heads
    inv_scale = 1.0 / math.sqrt(dh)
    heads = []
    for i in range(n_heads):
        lo, hi = i * dh, (i + 1) * dh
        qi = T.slice_lastdim(q, lo, hi)
        ki = T.slice_lastdim(k, lo, hi)
        vi = T.slice_lastdim(v, lo, hi)
        scores = T.scale(T.matmul(qi, T.transpose_last2(ki)), inv_scale)
        heads.append(T.matmul(T.softmax_lastdim(scores), vi))
    merged = heads[0] if n_heads == 1 else T.concat_lastdim(heads)
    return T.add(T.matmul(merged, layer.w_o), layer.b_o)


def encode_series(x_patches, params: EncoderParams, cfg: EncoderConfig,
                  rng: np.random.Generator | None = None) -> Tensor:
    """Encode patches (p x patch_len, or B x p x patch_len) to p x d_ts.

    The batched form runs each window independently through the same weights;
    no information crosses the batch axis.
    """
    x = x_patches if isinstance(x_patches, Tensor) else Tensor(x_patches)
    if x.ndim not in (2, 3):
        raise ShapeError(f"expected patches of rank 2 or 3, got shape {x.shape}")
    p = x.shape[-2]
    if x.shape[-1] != cfg.patch.patch_len:
        raise ShapeError(
            f"patch width {x.shape[-1]} does not match configured patch_len "
            f"{cfg.patch.patch_len}")
    if p > cfg.p_max:
        raise ShapeError(f"{p} patches exceed the positional table size p_max={cfg.p_max}")

    h = T.add(T.matmul(x, params.w_patch), params.b_patch)
    pos = params.positions if p == cfg.p_max else T.slice_axis0(params.positions, 0, p)
    if x.ndim == 3:
        pos = T.expand_batch(pos, x.shape[0])
    h = T.add(h, pos)

    for layer in params.layers:
        attn = _multi_head_self_attention(
            T.layer_norm(h, layer.ln1_gain, layer.ln1_bias), layer, cfg.n_heads, cfg.d_ts)
        h = T.add(h, T.dropout(attn, cfg.dropout, rng))
        ff_in = T.layer_norm(h, layer.ln2_gain, layer.ln2_bias)
        ff = T.add(T.matmul(T.activation(T.add(T.matmul(ff_in, layer.w_ff1), layer.b_ff1),
                                         cfg.activation), layer.w_ff2), layer.b_ff2)
        h = T.add(h, T.dropout(ff, cfg.dropout, rng))
    return h
