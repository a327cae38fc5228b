"""Loss computation, Adam optimization, the epoch loop with plateau-based
early stopping, and binary checkpointing.

Early stopping follows the literal rule: training stops once the absolute
change between consecutive validation losses falls below the configured
delta (patience 1 by default; higher patience requires that many plateau
epochs in a row). The returned checkpoint always carries the parameters of
the best validation epoch.
"""

from __future__ import annotations

import copy
import json
import math
import struct
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import tensor as T
from .data import PatchConfig, WindowSample
from .encoder import EncoderConfig
from .errors import ConfigError, DivergenceError, ShapeError
from .fusion import (WITH_TEXT, FusionConfig, ModelParams, build_model,
                     predict_batch_with_text, predict_batch_without_text)
from .tensor import Tensor

CHECKPOINT_MAGIC = b"TFHC"
CHECKPOINT_VERSION = 1


@dataclass
class TrainConfig:
    max_epochs: int = 100
    early_stop_delta: float = 1e-4
    patience: int = 1
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps_adam: float = 1e-8
    batch_size: int = 64
    loss_kind: str = "mse"
    seed: int = 0

    def __post_init__(self):
        if self.max_epochs < 1:
            raise ConfigError(f"max_epochs must be >= 1, got {self.max_epochs}")
        if self.early_stop_delta <= 0:
            raise ConfigError(f"early_stop_delta must be > 0, got {self.early_stop_delta}")
        if self.patience < 1:
            raise ConfigError(f"patience must be >= 1, got {self.patience}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.loss_kind not in ("mse", "mae"):
            raise ConfigError(f"loss_kind must be 'mse' or 'mae', got {self.loss_kind!r}")


def compute_loss(pred: Tensor, target, kind: str = "mse") -> Tensor:
    """Mean squared or mean absolute error over all elements."""
    target = target if isinstance(target, Tensor) else Tensor(target)
    if pred.shape != target.shape:
        raise ShapeError(f"loss shapes differ: {pred.shape} vs {target.shape}")
    diff = T.sub(pred, target)
    if kind == "mse":
        return T.mean_all(T.mul(diff, diff))
    if kind == "mae":
        return T.mean_all(T.absolute(diff))
    raise ShapeError(f"unknown loss kind {kind!r}")


@dataclass
class AdamMoments:
    m: list[np.ndarray]
    v: list[np.ndarray]

    @classmethod
    def zeros_like(cls, params: Sequence[Tensor]) -> "AdamMoments":
        return cls([np.zeros_like(p.data) for p in params],
                   [np.zeros_like(p.data) for p in params])


def adam_step(params: Sequence[Tensor], grads: Sequence[np.ndarray | None],
              moments: AdamMoments, cfg: TrainConfig, t: int) -> None:
    """Standard bias-corrected Adam update, in place. A missing gradient is
    treated as zero, which leaves the parameter (and its moments' decay)
    consistent with a zero-gradient step."""
    if t < 1:
        raise ShapeError(f"Adam step index must be >= 1, got {t}")
    bc1 = 1.0 - cfg.beta1 ** t
    bc2 = 1.0 - cfg.beta2 ** t
    for i, p in enumerate(params):
        g = grads[i]
        if g is None:
            g = 0.0
        moments.m[i] = cfg.beta1 * moments.m[i] + (1.0 - cfg.beta1) * g
        moments.v[i] = cfg.beta2 * moments.v[i] + (1.0 - cfg.beta2) * np.square(g)
        m_hat = moments.m[i] / bc1
        v_hat = moments.v[i] / bc2
        p.data -= cfg.lr * m_hat / (np.sqrt(v_hat) + cfg.eps_adam)


def should_stop(val_history: Sequence[float], delta: float) -> bool:
    """True iff the last two validation losses differ by less than delta."""
    if len(val_history) < 2:
        return False
    return abs(val_history[-1] - val_history[-2]) < delta


@dataclass
class Checkpoint:
    model: ModelParams
    train_cfg: TrainConfig
    strategy: str | None
    epoch: int
    val_history: list[float]
    adam_t: int
    moments: AdamMoments | None = None

    def forward_fingerprint(self, x: np.ndarray, z_tx: np.ndarray | None) -> np.ndarray:
        if self.model.variant == WITH_TEXT:
            return predict_batch_with_text(x, z_tx, self.model).data
        return predict_batch_without_text(x, self.model).data


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    log: list[dict]


def _batch_predictions(model: ModelParams, x: np.ndarray,
                       ztx: np.ndarray | None) -> Tensor:
    if model.variant == WITH_TEXT:
        return predict_batch_with_text(x, ztx, model)
    return predict_batch_without_text(x, model)


def _prepare_arrays(model: ModelParams, windows: Sequence[WindowSample],
                    text_vectors: dict[int, np.ndarray] | None):
    """Stack windows into normalized input/target arrays (plus text queries)."""
    from .data import NORM_EPS
    n = len(windows)
    l = windows[0].x.shape[0]
    h = windows[0].y.shape[0]
    x = np.empty((n, l))
    y = np.empty((n, h))
    for i, w in enumerate(windows):
        if model.normalize:
            if w.norm_stats is None:
                raise ShapeError("window lacks norm_stats but model.normalize is on")
            mean, std = w.norm_stats
            x[i] = (w.x - mean) / (std + NORM_EPS)
            y[i] = (w.y - mean) / (std + NORM_EPS)
        else:
            x[i] = w.x
            y[i] = w.y
    ztx = None
    if model.variant == WITH_TEXT:
        if text_vectors is None:
            raise ShapeError("with_text training requires pooled text vectors")
        ztx = np.stack([text_vectors[w.channel_index] for w in windows])
    return x, y, ztx


def train(model: ModelParams, train_windows: Sequence[WindowSample],
          val_windows: Sequence[WindowSample],
          text_vectors: dict[int, np.ndarray] | None,
          cfg: TrainConfig,
          strategy: str | None = None,
          val_loss_fn: Callable[[int], float] | None = None,
          log_fn: Callable[[str], None] | None = None) -> TrainResult:
    """Run the epoch loop and return the best-validation checkpoint.

    ``val_loss_fn``, when given, replaces the computed validation loss
    (test hook for scripted early-stopping sequences).
    """
    if not train_windows or not val_windows:
        raise ShapeError("train and validation window sets must be nonempty")
    x_tr, y_tr, z_tr = _prepare_arrays(model, train_windows, text_vectors)
    x_va, y_va, z_va = _prepare_arrays(model, val_windows, text_vectors)

    rng = np.random.default_rng(cfg.seed)
    named = model.named_parameters()
    params = [t for _, t in named]
    moments = AdamMoments.zeros_like(params)
    step = 0
    val_history: list[float] = []
    log: list[dict] = []
    best_val = math.inf
    best_snapshot = [p.data.copy() for p in params]
    best_moments = copy.deepcopy(moments)
    best_epoch = 0
    plateau = 0

    for epoch in range(1, cfg.max_epochs + 1):
        order = rng.permutation(len(train_windows))
        epoch_loss = 0.0
        for lo in range(0, len(order), cfg.batch_size):
            idx = order[lo:lo + cfg.batch_size]
            model.zero_grads()
            with T.GradientTape() as tape:
                pred = _batch_predictions(model, x_tr[idx],
                                          None if z_tr is None else z_tr[idx])
                loss = compute_loss(pred, y_tr[idx], cfg.loss_kind)
            if not np.isfinite(loss.data):
                raise DivergenceError(
                    f"training loss became non-finite at epoch {epoch}, step {step + 1}")
            tape.backward(loss)
            step += 1
            adam_step(params, [p.grad for p in params], moments, cfg, step)
            epoch_loss += float(loss.data) * len(idx)
        epoch_loss /= len(order)

        if val_loss_fn is not None:
            val = float(val_loss_fn(epoch))
        else:
            pred = _batch_predictions(model, x_va, z_va)
            val = float(compute_loss(pred, y_va, cfg.loss_kind).data)
        if not np.isfinite(val):
            raise DivergenceError(f"validation loss became non-finite at epoch {epoch}")
        val_history.append(val)
        log.append({"epoch": epoch, "train_loss": epoch_loss, "val_loss": val})
        if log_fn is not None:
            log_fn(f"epoch {epoch}: train {epoch_loss:.6f} val {val:.6f}")

        if val < best_val:
            best_val = val
            best_snapshot = [p.data.copy() for p in params]
            best_moments = copy.deepcopy(moments)
            best_epoch = epoch

        if should_stop(val_history, cfg.early_stop_delta):
            plateau += 1
        else:
            plateau = 0
        if plateau >= cfg.patience:
            break

    for p, snap in zip(params, best_snapshot):
        p.data = snap
    ckpt = Checkpoint(model, cfg, strategy, best_epoch, val_history, step, best_moments)
    return TrainResult(ckpt, log)


# ---------------------------------------------------------------------------
# checkpoint serialization (layout documented in docs/formats.md)


def _config_meta(ckpt: Checkpoint) -> dict:
    m = ckpt.model
    return {
        "version": CHECKPOINT_VERSION,
        "variant": m.variant,
        "horizon": m.horizon,
        "d_tx": m.d_tx,
        "normalize": m.normalize,
        "strategy": ckpt.strategy,
        "epoch": ckpt.epoch,
        "adam_t": ckpt.adam_t,
        "val_history": ckpt.val_history,
        "encoder_cfg": {
            "d_ts": m.encoder_cfg.d_ts, "n_layers": m.encoder_cfg.n_layers,
            "n_heads": m.encoder_cfg.n_heads, "d_ff": m.encoder_cfg.d_ff,
            "p_max": m.encoder_cfg.p_max, "activation": m.encoder_cfg.activation,
            "dropout": m.encoder_cfg.dropout,
            "patch": {"patch_len": m.encoder_cfg.patch.patch_len,
                      "stride": m.encoder_cfg.patch.stride,
                      "pad_end": m.encoder_cfg.patch.pad_end},
        },
        "fusion_cfg": {"d": m.fusion_cfg.d, "n_heads": m.fusion_cfg.n_heads,
                       "d_ff_head": m.fusion_cfg.d_ff_head},
        "train_cfg": asdict(ckpt.train_cfg),
    }


def save_checkpoint(ckpt: Checkpoint, path: str | Path) -> None:
    meta = json.dumps(_config_meta(ckpt), sort_keys=True,
                      separators=(",", ":")).encode("utf-8")
    arrays: list[tuple[str, np.ndarray]] = [
        (name, t.data) for name, t in ckpt.model.named_parameters()]
    if ckpt.moments is not None:
        names = [name for name, _ in ckpt.model.named_parameters()]
        for name, m in zip(names, ckpt.moments.m):
            arrays.append((f"adam.m.{name}", m))
        for name, v in zip(names, ckpt.moments.v):
            arrays.append((f"adam.v.{name}", v))
    with Path(path).open("wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<HI", CHECKPOINT_VERSION, len(meta)))
        fh.write(meta)
        fh.write(struct.pack("<I", len(arrays)))
        for name, arr in arrays:
            nb = name.encode("utf-8")
            fh.write(struct.pack("<H", len(nb)))
            fh.write(nb)
            fh.write(struct.pack("<B", arr.ndim))
            for dim in arr.shape:
                fh.write(struct.pack("<I", dim))
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_checkpoint(path: str | Path) -> Checkpoint:
    blob = Path(path).read_bytes()
    pos = 0

    def take(n: int) -> bytes:
        nonlocal pos
        if pos + n > len(blob):
            raise ConfigError(f"{path}: truncated checkpoint")
        out = blob[pos:pos + n]
        pos += n
        return out

    if take(4) != CHECKPOINT_MAGIC:
        raise ConfigError(f"{path}: not a checkpoint file")
    version, meta_len = struct.unpack("<HI", take(6))
    if version != CHECKPOINT_VERSION:
        raise ConfigError(f"{path}: unsupported checkpoint version {version}")
    meta = json.loads(take(meta_len).decode("utf-8"))
    (n_arrays,) = struct.unpack("<I", take(4))
    arrays: dict[str, np.ndarray] = {}
    for _ in range(n_arrays):
        (name_len,) = struct.unpack("<H", take(2))
        name = take(name_len).decode("utf-8")
        (ndim,) = struct.unpack("<B", take(1))
        shape = tuple(struct.unpack("<I", take(4))[0] for _ in range(ndim))
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        arrays[name] = np.frombuffer(take(count * 8), dtype="<f8").reshape(shape).copy()
    if pos != len(blob):
        raise ConfigError(f"{path}: trailing bytes after checkpoint payload")

    ecfg = meta["encoder_cfg"]
    encoder_cfg = EncoderConfig(
        d_ts=ecfg["d_ts"], n_layers=ecfg["n_layers"], n_heads=ecfg["n_heads"],
        d_ff=ecfg["d_ff"], p_max=ecfg["p_max"], activation=ecfg["activation"],
        dropout=ecfg["dropout"],
        patch=PatchConfig(**ecfg["patch"]))
    fusion_cfg = FusionConfig(**meta["fusion_cfg"])
    model = build_model(meta["variant"], encoder_cfg, fusion_cfg, meta["horizon"],
                        seed=0, d_tx=meta["d_tx"], normalize=meta["normalize"])
    names = []
    for name, t in model.named_parameters():
        if name not in arrays:
            raise ConfigError(f"{path}: checkpoint is missing tensor {name!r}")
        if arrays[name].shape != t.data.shape:
            raise ConfigError(f"{path}: tensor {name!r} has shape {arrays[name].shape}, "
                              f"expected {t.data.shape}")
        t.data = arrays[name]
        names.append(name)
    moments = None
    if f"adam.m.{names[0]}" in arrays:
        moments = AdamMoments([arrays[f"adam.m.{n}"] for n in names],
                              [arrays[f"adam.v.{n}"] for n in names])
    train_cfg = TrainConfig(**meta["train_cfg"])
    return Checkpoint(model, train_cfg, meta["strategy"], meta["epoch"],
                      list(meta["val_history"]), meta["adam_t"], moments)
