"""MAE/WAPE metrics, per-horizon reports, and the with/without-text ablation.

An ablation trains, per horizon, one text-free model and one text-fusion
model per pooling strategy from identical seeds and otherwise identical
configuration, then compares the two arms cell by cell. "Best" marking uses
strict minimum with ties marked jointly.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, asdict
from pathlib import Path
from typing import Sequence

import numpy as np

from .data import (RawDataset, WindowSample, denormalize, make_windows,
                   split_chronological)
from .encoder import EncoderConfig
from .errors import MetricError, ShapeError
from .fusion import (WITH_TEXT, WITHOUT_TEXT, FusionConfig, build_model,
                     predict_batch_with_text, predict_batch_without_text)
from .text import TokenEmbeddingSet, pool
from .training import Checkpoint, TrainConfig, _prepare_arrays, train

NORMALIZED = "normalized"
RAW = "raw"


def mae(pred, target) -> float:
    """Mean absolute error, (1/N) * sum |target - pred|."""
    pred = np.asarray(pred, dtype=np.float64).ravel()
    target = np.asarray(target, dtype=np.float64).ravel()
    if pred.shape != target.shape:
        raise MetricError(f"mae length mismatch: {pred.shape} vs {target.shape}")
    if pred.size == 0:
        raise MetricError("mae undefined for empty vectors")
    return float(np.mean(np.abs(target - pred)))


def wape(pred, target) -> float:
    """Weighted absolute percentage error, sum |target - pred| / sum |target|."""
    pred = np.asarray(pred, dtype=np.float64).ravel()
    target = np.asarray(target, dtype=np.float64).ravel()
    if pred.shape != target.shape:
        raise MetricError(f"wape length mismatch: {pred.shape} vs {target.shape}")
    if pred.size == 0:
        raise MetricError("wape undefined for empty vectors")
    denom = float(np.sum(np.abs(target)))
    if denom == 0.0:
        raise MetricError("wape undefined: target is all zeros")
    return float(np.sum(np.abs(target - pred)) / denom)


@dataclass
class MetricsReport:
    variant: str
    pooling: str | None
    horizon: int
    mae: float
    wape: float
    n_windows: int
    seed: int
    scale: str

    def label(self) -> str:
        if self.variant == WITHOUT_TEXT:
            return WITHOUT_TEXT
        return f"{WITH_TEXT}:{self.pooling}"


def pooled_text_vectors(channel_ids: Sequence[str],
                        embeddings: dict[str, TokenEmbeddingSet],
                        strategy) -> dict[int, np.ndarray]:
    """Pool one frozen query vector per channel, keyed by channel index."""
    vectors = {}
    for i, cid in enumerate(channel_ids):
        if cid not in embeddings:
            raise ShapeError(f"no embedding for channel {cid!r}")
        vectors[i] = pool(embeddings[cid], strategy)
    return vectors


def evaluate_model(checkpoint: Checkpoint, windows: Sequence[WindowSample],
                   channel_ids: Sequence[str] | None = None,
                   embeddings: dict[str, TokenEmbeddingSet] | None = None,
                   strategy=None, scale: str = NORMALIZED) -> MetricsReport:
    """Forecast every window and pool all per-step errors into MAE and WAPE.

    ``scale`` selects whether errors are measured on the instance-normalized
    scale or after de-normalization back to the data scale.
    """
    if not windows:
        raise MetricError("cannot evaluate on an empty window set")
    if scale not in (NORMALIZED, RAW):
        raise ShapeError(f"scale must be '{NORMALIZED}' or '{RAW}', got {scale!r}")
    model = checkpoint.model
    strategy = strategy if strategy is not None else checkpoint.strategy
    text_vectors = None
    if model.variant == WITH_TEXT:
        if embeddings is None or channel_ids is None:
            raise ShapeError("with_text evaluation requires embeddings and channel ids")
        text_vectors = pooled_text_vectors(channel_ids, embeddings, strategy)
    x, y_norm, ztx = _prepare_arrays(model, windows, text_vectors)
    if model.variant == WITH_TEXT:
        pred = predict_batch_with_text(x, ztx, model).data
    else:
        pred = predict_batch_without_text(x, model).data

    if scale == RAW and model.normalize:
        pred_eval = np.empty_like(pred)
        target_eval = np.empty_like(pred)
        for i, w in enumerate(windows):
            mean, std = w.norm_stats
            pred_eval[i] = denormalize(pred[i], mean, std)
            target_eval[i] = w.y
        fallback_scale = RAW
    else:
        pred_eval, target_eval = pred, y_norm
        fallback_scale = NORMALIZED if model.normalize else RAW
    pooling = None
    if model.variant == WITH_TEXT:
        pooling = strategy.value if hasattr(strategy, "value") else str(strategy)
    return MetricsReport(
        variant=model.variant, pooling=pooling,
        horizon=model.horizon, mae=mae(pred_eval, target_eval),
        wape=wape(pred_eval, target_eval), n_windows=len(windows),
        seed=checkpoint.train_cfg.seed, scale=fallback_scale)


def mark_best(values: dict[str, float]) -> list[str]:
    """Labels holding the strict minimum; ties are all marked."""
    best = min(values.values())
    return [label for label, v in values.items() if v == best]


@dataclass
class AblationSettings:
    l: int
    horizons: list[int]
    strategies: list[str]
    encoder_cfg: EncoderConfig
    fusion_cfg: FusionConfig
    train_cfg: TrainConfig
    d_tx: int
    split: tuple[float, float, float] = (0.7, 0.1, 0.2)
    window_stride: int = 1
    normalize: bool = True
    scale: str = NORMALIZED
    max_workers: int = 1


def _run_cell(dataset: RawDataset, embeddings, settings: AblationSettings,
              horizon: int, variant: str, strategy: str | None):
    tr, va, te = split_chronological(dataset, settings.split, settings.l + horizon)
    kwargs = dict(l=settings.l, h=horizon, window_stride=settings.window_stride,
                  normalize=settings.normalize)
    train_w = make_windows(dataset, tr, **kwargs)
    val_w = make_windows(dataset, va, **kwargs)
    test_w = make_windows(dataset, te, **kwargs)
    model = build_model(variant, settings.encoder_cfg, settings.fusion_cfg, horizon,
                        seed=settings.train_cfg.seed,
                        d_tx=settings.d_tx if variant == WITH_TEXT else None,
                        normalize=settings.normalize)
    vectors = None
    if variant == WITH_TEXT:
        vectors = pooled_text_vectors(dataset.channel_ids, embeddings, strategy)
    result = train(model, train_w, val_w, vectors, settings.train_cfg, strategy=strategy)
    return evaluate_model(result.checkpoint, test_w, dataset.channel_ids, embeddings,
                          strategy, settings.scale)


def run_ablation(dataset: RawDataset, embeddings: dict[str, TokenEmbeddingSet] | None,
                 settings: AblationSettings) -> dict:
    """Train and evaluate the full (horizon x variant) grid.

    Every cell retrains from the same seed; the with-text arms differ from
    the baseline only in the fusion path and pooling strategy.
    """
    if not settings.horizons:
        raise ShapeError("ablation requires at least one horizon")
    if settings.strategies and embeddings is None:
        raise ShapeError("with_text ablation arms require embeddings")
    cells_spec = []
    for h in settings.horizons:
        cells_spec.append((h, WITHOUT_TEXT, None))
        for strat in settings.strategies:
            cells_spec.append((h, WITH_TEXT, strat))

    if settings.max_workers > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(max_workers=settings.max_workers) as pool_:
            reports = list(pool_.map(
                lambda spec: _run_cell(dataset, embeddings, settings, *spec), cells_spec))
    else:
        reports = [_run_cell(dataset, embeddings, settings, *spec) for spec in cells_spec]

    by_horizon: dict[int, dict[str, MetricsReport]] = {}
    for rep in reports:
        by_horizon.setdefault(rep.horizon, {})[rep.label()] = rep
    best = {"mae": {}, "wape": {}}
    for h, row in by_horizon.items():
        best["mae"][str(h)] = mark_best({k: r.mae for k, r in row.items()})
        best["wape"][str(h)] = mark_best({k: r.wape for k, r in row.items()})
    return {
        "horizons": list(settings.horizons),
        "variants": [WITHOUT_TEXT] + [f"{WITH_TEXT}:{s}" for s in settings.strategies],
        "seed": settings.train_cfg.seed,
        "scale": settings.scale,
        "cells": [asdict(r) for r in reports],
        "best": best,
    }


def write_report_json(report: dict, path: str | Path) -> None:
    Path(path).write_text(json.dumps(report, indent=2, sort_keys=True) + "\n",
                          encoding="utf-8")


def write_report_csvs(report: dict, out_dir: str | Path) -> list[Path]:
    """One CSV per metric: rows are variant/strategy, columns are horizons."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    horizons = report["horizons"]
    variants = report["variants"]
    table = {(c["variant"] if c["pooling"] is None else f"{c['variant']}:{c['pooling']}",
              c["horizon"]): c for c in report["cells"]}
    written = []
    for metric in ("mae", "wape"):
        path = out_dir / f"{metric}.csv"
        with path.open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["variant"] + [str(h) for h in horizons])
            for label in variants:
                row = [label]
                for h in horizons:
                    cell = table.get((label, h))
                    row.append(repr(cell[metric]) if cell else "")
                writer.writerow(row)
        written.append(path)
    return written
