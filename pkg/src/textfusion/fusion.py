"""Cross-attention fusion of the pooled text query with patch encodings,
plus the forecast heads for both model variants.

With text: the pooled text vector is projected to a query, attends over the
per-patch keys/values, and a small MLP maps the fused vector to the h-step
forecast. Without text: the patch encodings are flattened into one vector
and a single linear layer produces the forecast; no text enters that path.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .data import WindowSample, denormalize, instance_normalize, patchify
from .encoder import EncoderConfig, EncoderParams, init_params
from .errors import ShapeError
from .tensor import Tensor
from .text import TokenEmbeddingSet, pool

WITH_TEXT = "with_text"
WITHOUT_TEXT = "without_text"


@dataclass
class FusionConfig:
    d: int | None = None          # fused width; defaults to d_ts
    n_heads: int = 1
    d_ff_head: int | None = None  # head MLP hidden width; defaults to 2*d

    def resolve(self, d_ts: int) -> tuple[int, int]:
        d = self.d if self.d is not None else d_ts
        if d < 1 or d % self.n_heads != 0:
            raise ShapeError(f"fused width {d} must be positive and divisible by "
                             f"n_heads={self.n_heads}")
        hidden = self.d_ff_head if self.d_ff_head is not None else 2 * d
        if hidden < 1:
            raise ShapeError(f"d_ff_head must be positive, got {hidden}")
        return d, hidden


@dataclass
class FusionParams:
    w_q: Tensor  # d_tx x d
    b_q: Tensor
    w_k: Tensor  # d_ts x d
    b_k: Tensor
    w_v: Tensor  # d_ts x d
    b_v: Tensor
    mlp_w1: Tensor  # d x hidden
    mlp_b1: Tensor
    mlp_w2: Tensor  # hidden x h
    mlp_b2: Tensor
    flat_w: Tensor  # (p * d_ts) x h
    flat_b: Tensor

    def named(self, variant: str, prefix: str = "fusion") -> list[tuple[str, Tensor]]:
        if variant == WITH_TEXT:
            fields = ("w_q", "b_q", "w_k", "b_k", "w_v", "b_v",
                      "mlp_w1", "mlp_b1", "mlp_w2", "mlp_b2")
        elif variant == WITHOUT_TEXT:
            fields = ("flat_w", "flat_b")
        else:
            raise ShapeError(f"unknown model variant {variant!r}")
        return [(f"{prefix}.{f}", getattr(self, f)) for f in fields]


def init_fusion_params(cfg: FusionConfig, d_ts: int, d_tx: int, p: int, h: int,
                       seed: int) -> FusionParams:
    rng = np.random.default_rng(seed)
    d, hidden = cfg.resolve(d_ts)

    def uniform(fan_in, *shape):
        bound = 1.0 / math.sqrt(fan_in)
        return Tensor(rng.uniform(-bound, bound, shape), requires_grad=True)

    def zeros(*shape):
        return Tensor(np.zeros(shape), requires_grad=True)

    return FusionParams(
        w_q=uniform(d_tx, d_tx, d), b_q=zeros(d),
        w_k=uniform(d_ts, d_ts, d), b_k=zeros(d),
        w_v=uniform(d_ts, d_ts, d), b_v=zeros(d),
        mlp_w1=uniform(d, d, hidden), mlp_b1=zeros(hidden),
        mlp_w2=uniform(hidden, hidden, h), mlp_b2=zeros(h),
        flat_w=uniform(p * d_ts, p * d_ts, h), flat_b=zeros(h),
    )


def cross_attention(z_tx, z_ts: Tensor, params: FusionParams,
                    n_heads: int = 1) -> Tensor:
    """Fuse one pooled text vector with the patch matrix.

    q = z_tx.W_q, k_i = z_ts[i].W_k, v_i = z_ts[i].W_v;
    weights = softmax(q.k^T / sqrt(d_head)); result = sum_i weights_i * v_i.

    Accepts a single (d_tx,) query with (p, d_ts) keys, or a batch
    (B, d_tx) with (B, p, d_ts).
    """
    z_tx = z_tx if isinstance(z_tx, Tensor) else Tensor(z_tx)
    z_ts = z_ts if isinstance(z_ts, Tensor) else Tensor(z_ts)
    single = z_tx.ndim == 1
    if single != (z_ts.ndim == 2) or z_tx.ndim not in (1, 2):
        raise ShapeError(
            f"query rank {z_tx.ndim} inconsistent with key/value rank {z_ts.ndim}")
    if not single and z_tx.shape[0] != z_ts.shape[0]:
        raise ShapeError(f"batch sizes differ: {z_tx.shape} vs {z_ts.shape}")
    if z_tx.shape[-1] != params.w_q.shape[0]:
        raise ShapeError(f"query width {z_tx.shape[-1]} does not match "
                         f"W_q input width {params.w_q.shape[0]}")
    if z_ts.shape[-1] != params.w_k.shape[0]:
        raise ShapeError(f"key width {z_ts.shape[-1]} does not match "
                         f"W_k input width {params.w_k.shape[0]}")

    batch = 1 if single else z_tx.shape[0]
    q2 = T.reshape(z_tx, (1, z_tx.shape[-1])) if single else z_tx
    q = T.add(T.matmul(q2, params.w_q), params.b_q)      # B x d
    k = T.add(T.matmul(z_ts, params.w_k), params.b_k)    # (B x) p x d
    v = T.add(T.matmul(z_ts, params.w_v), params.b_v)
    d = q.shape[-1]
    if d % n_heads != 0:
        raise ShapeError(f"fused width {d} not divisible by n_heads={n_heads}")
    dh = d // n_heads
    inv_scale = 1.0 / math.sqrt(dh)

    q3 = T.reshape(q, (batch, 1, d))
    if single:
        k = T.reshape(k, (1,) + k.shape)
        v = T.reshape(v, (1,) + v.shape)
    heads = []
    for i in range(n_heads):
        lo, hi = i * dh, (i + 1) * dh
        qi = T.slice_lastdim(q3, lo, hi)
        ki = T.slice_lastdim(k, lo, hi)
        vi = T.slice_lastdim(v, lo, hi)
        weights = T.softmax_lastdim(T.scale(T.matmul(qi, T.transpose_last2(ki)), inv_scale))
        heads.append(T.matmul(weights, vi))  # B x 1 x dh
    fused = heads[0] if n_heads == 1 else T.concat_lastdim(heads)
    return T.reshape(fused, (d,) if single else (batch, d))


@dataclass
class ModelParams:
    """All learnable weights of one model variant, addressable by name."""
    variant: str
    horizon: int
    d_tx: int | None
    encoder_cfg: EncoderConfig
    fusion_cfg: FusionConfig
    encoder: EncoderParams
    fusion: FusionParams
    normalize: bool = True

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        return self.encoder.named() + self.fusion.named(self.variant)

    def zero_grads(self) -> None:
        for _, t in self.named_parameters():
            t.zero_grad()


def build_model(variant: str, encoder_cfg: EncoderConfig, fusion_cfg: FusionConfig,
                horizon: int, seed: int, d_tx: int | None = None,
                normalize: bool = True) -> ModelParams:
    if variant not in (WITH_TEXT, WITHOUT_TEXT):
        raise ShapeError(f"unknown model variant {variant!r}")
    if variant == WITH_TEXT and d_tx is None:
        raise ShapeError("with_text model requires d_tx")
    enc = init_params(encoder_cfg, seed)
    fus = init_fusion_params(fusion_cfg, encoder_cfg.d_ts, d_tx if d_tx else 1,
                             encoder_cfg.p_max, horizon, seed + 1)
    return ModelParams(variant, horizon, d_tx, encoder_cfg, fusion_cfg, enc, fus, normalize)


def _normalized_input(sample: WindowSample, normalize: bool) -> tuple[np.ndarray, tuple[float, float] | None]:
    if not normalize:
        return np.asarray(sample.x, dtype=np.float64), None
    if sample.norm_stats is not None:
        mean, std = sample.norm_stats
        xn = (np.asarray(sample.x, dtype=np.float64) - mean) / (std + 1e-5)
        return xn, (mean, std)
    xn, mean, std = instance_normalize(sample.x)
    return xn, (mean, std)


def predict_batch_with_text(x_norm_batch: np.ndarray, z_tx_batch: np.ndarray,
                            model: ModelParams) -> Tensor:
    """Normalized-scale forecasts (B x h) for pre-normalized windows."""
    patches = np.stack([patchify(x, model.encoder_cfg.patch) for x in x_norm_batch])
    z_ts = T.Tensor(patches)
    enc = _encode(z_ts, model)
    fused = cross_attention(Tensor(z_tx_batch), enc, model.fusion,
                            model.fusion_cfg.n_heads)
    hidden = T.gelu(T.add(T.matmul(fused, model.fusion.mlp_w1), model.fusion.mlp_b1))
    return T.add(T.matmul(hidden, model.fusion.mlp_w2), model.fusion.mlp_b2)


def predict_batch_without_text(x_norm_batch: np.ndarray, model: ModelParams) -> Tensor:
    patches = np.stack([patchify(x, model.encoder_cfg.patch) for x in x_norm_batch])
    enc = _encode(T.Tensor(patches), model)
    b, p, d = enc.shape
    flat = T.reshape(enc, (b, p * d))
    if flat.shape[1] != model.fusion.flat_w.shape[0]:
        raise ShapeError(f"flattened width {flat.shape[1]} does not match baseline head "
                         f"input {model.fusion.flat_w.shape[0]}")
    return T.add(T.matmul(flat, model.fusion.flat_w), model.fusion.flat_b)


def _encode(patches: Tensor, model: ModelParams) -> Tensor:
    from .encoder import encode_series
    return encode_series(patches, model.encoder, model.encoder_cfg)


def forecast_with_text(sample: WindowSample, embedding: TokenEmbeddingSet,
                       strategy, model: ModelParams) -> np.ndarray:
    """Full pipeline for one window: normalize, patchify, encode, pool,
    cross-attend, head MLP, de-normalize. Returns the h-step forecast."""
    if model.variant != WITH_TEXT:
        raise ShapeError(f"model variant is {model.variant!r}, expected {WITH_TEXT!r}")
    z_tx = pool(embedding, strategy)
    xn, stats = _normalized_input(sample, model.normalize)
    pred = predict_batch_with_text(xn[None, :], z_tx[None, :], model).data[0]
    return denormalize(pred, *stats) if stats else pred


def forecast_without_text(sample: WindowSample, model: ModelParams) -> np.ndarray:
    if model.variant != WITHOUT_TEXT:
        raise ShapeError(f"model variant is {model.variant!r}, expected {WITHOUT_TEXT!r}")
    xn, stats = _normalized_input(sample, model.normalize)
    pred = predict_batch_without_text(xn[None, :], model).data[0]
    return denormalize(pred, *stats) if stats else pred
