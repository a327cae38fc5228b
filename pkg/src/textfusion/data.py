"""Series loading, chronological splits, window extraction, patching.

File formats:
  * series CSV: header ``timestamp,<id1>,<id2>,...``, one row per timestamp,
    decimal float values, UTF-8;
  * text sidecar: one JSON object per line, ``{"channel": "<id>", "text": "..."}``.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path

import numpy as np

from .errors import DataFormatError, ShapeError

NORM_EPS = 1e-5
SPACING_RTOL = 1e-9


@dataclass
class PatchConfig:
    patch_len: int = 4
    stride: int = 2
    pad_end: bool = True

    def __post_init__(self):
        if self.patch_len < 1:
            raise ShapeError(f"patch_len must be >= 1, got {self.patch_len}")
        if not 1 <= self.stride <= self.patch_len:
            raise ShapeError(
                f"stride must lie in [1, patch_len={self.patch_len}], got {self.stride}")


@dataclass
class WindowSample:
    """One (channel, input window, target) instance; ``y`` directly follows ``x``."""
    channel_index: int
    x: np.ndarray
    y: np.ndarray
    norm_stats: tuple[float, float] | None = None


@dataclass
class RawDataset:
    channel_ids: list[str]
    timestamps: list[float]
    values: np.ndarray  # T x C, float64
    texts: dict[str, str] = field(default_factory=dict)

    @property
    def n_steps(self) -> int:
        return self.values.shape[0]

    @property
    def n_channels(self) -> int:
        return self.values.shape[1]

    def validate(self) -> None:
        if len(set(self.channel_ids)) != len(self.channel_ids):
            raise DataFormatError("duplicate channel id in dataset")
        if self.values.shape != (len(self.timestamps), len(self.channel_ids)):
            raise DataFormatError(
                f"values shape {self.values.shape} inconsistent with "
                f"{len(self.timestamps)} timestamps x {len(self.channel_ids)} channels")
        ts = np.asarray(self.timestamps, dtype=np.float64)
        if len(ts) >= 2:
            gaps = np.diff(ts)
            if np.any(gaps <= 0):
                raise DataFormatError("timestamps must be strictly increasing")
            spread = gaps.max() - gaps.min()
            if spread > SPACING_RTOL * max(abs(gaps[0]), 1.0):
                raise DataFormatError("timestamps must be uniformly spaced")
        if not np.isfinite(self.values).all():
            raise DataFormatError("dataset contains non-finite values")
        for cid in self.texts:
            if cid not in self.channel_ids:
                raise DataFormatError(f"text record references unknown channel {cid!r}")


def _parse_timestamp(token: str, line_no: int) -> float:
    try:
        return float(token)
    except ValueError:
        pass
    try:
        return datetime.fromisoformat(token).timestamp()
    except ValueError:
        raise DataFormatError(
            f"line {line_no}: timestamp {token!r} is neither numeric nor ISO-8601") from None


def load_dataset(series_path: str | Path, text_path: str | Path | None = None) -> RawDataset:
    """Parse a series CSV plus optional text sidecar into a validated RawDataset.

    Channels with any missing or unparseable value are rejected outright:
    a blank or malformed cell is a hard error naming its row and column.
    """
    series_path = Path(series_path)
    with series_path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataFormatError(f"{series_path}: empty file") from None
        if len(header) < 2 or header[0] != "timestamp":
            raise DataFormatError(
                f"{series_path}: header must be 'timestamp,<id1>,...', got {header!r}")
        channel_ids = header[1:]
        seen = set()
        for cid in channel_ids:
            if not cid:
                raise DataFormatError(f"{series_path}: empty channel id in header")
            if cid in seen:
                raise DataFormatError(f"{series_path}: duplicate channel id {cid!r}")
            seen.add(cid)

        timestamps: list[float] = []
        rows: list[list[float]] = []
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise DataFormatError(
                    f"{series_path}: line {line_no}: expected {len(header)} cells, got {len(row)}")
            timestamps.append(_parse_timestamp(row[0], line_no))
            parsed = []
            for col, cell in enumerate(row[1:]):
                if cell.strip() == "":
                    raise DataFormatError(
                        f"{series_path}: line {line_no}, column {channel_ids[col]!r}: missing value")
                try:
                    parsed.append(float(cell))
                except ValueError:
                    raise DataFormatError(
                        f"{series_path}: line {line_no}, column {channel_ids[col]!r}: "
                        f"not a decimal float: {cell!r}") from None
            rows.append(parsed)

    if not rows:
        raise DataFormatError(f"{series_path}: no data rows")
    values = np.array(rows, dtype=np.float64)

    texts: dict[str, str] = {}
    if text_path is not None:
        texts = load_text_sidecar(text_path, channel_ids)

    ds = RawDataset(channel_ids, timestamps, values, texts)
    ds.validate()
    return ds


def load_text_sidecar(text_path: str | Path, channel_ids: list[str]) -> dict[str, str]:
    text_path = Path(text_path)
    known = set(channel_ids)
    texts: dict[str, str] = {}
    with text_path.open(encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataFormatError(f"{text_path}: line {line_no}: invalid JSON: {exc}") from None
            if not isinstance(record, dict) or set(record) != {"channel", "text"}:
                raise DataFormatError(
                    f"{text_path}: line {line_no}: expected keys 'channel' and 'text'")
            cid, text = record["channel"], record["text"]
            if not isinstance(cid, str) or not isinstance(text, str):
                raise DataFormatError(f"{text_path}: line {line_no}: channel and text must be strings")
            if cid not in known:
                raise DataFormatError(f"{text_path}: line {line_no}: unknown channel {cid!r}")
            if cid in texts:
                raise DataFormatError(f"{text_path}: line {line_no}: duplicate channel {cid!r}")
            texts[cid] = text
    missing = [cid for cid in channel_ids if cid not in texts]
    if missing:
        raise DataFormatError(f"{text_path}: channels without text: {missing}")
    return texts


def write_series_csv(dataset: RawDataset, path: str | Path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["timestamp"] + list(dataset.channel_ids))
        for t, row in zip(dataset.timestamps, dataset.values):
            writer.writerow([repr(float(t))] + [repr(float(v)) for v in row])


def write_text_sidecar(texts: dict[str, str], path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for cid, text in texts.items():
            fh.write(json.dumps({"channel": cid, "text": text}, sort_keys=True) + "\n")


def split_chronological(dataset: RawDataset, ratios: tuple[float, float, float],
                        min_len: int) -> tuple[range, range, range]:
    """Contiguous, disjoint train/val/test time ranges covering all rows.

    Boundary rows go floor(T*ratio) to train and val, remainder to test.
    ``min_len`` (normally l + h) is the shortest usable split.
    """
    if len(ratios) != 3 or any(r <= 0 for r in ratios):
        raise ShapeError(f"ratios must be three positive numbers, got {ratios}")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ShapeError(f"ratios must sum to 1, got {sum(ratios)}")
    t = dataset.n_steps
    n_train = math.floor(t * ratios[0])
    n_val = math.floor(t * ratios[1])
    n_test = t - n_train - n_val
    for name, n in (("train", n_train), ("val", n_val), ("test", n_test)):
        if n < min_len:
            raise ShapeError(
                f"{name} split has {n} rows, shorter than the required {min_len} (l + h)")
    return (range(0, n_train),
            range(n_train, n_train + n_val),
            range(n_train + n_val, t))


def make_windows(dataset: RawDataset, index_range: range, l: int, h: int,
                 window_stride: int = 1, normalize: bool = True) -> list[WindowSample]:
    """Sliding (x, y) windows per channel within one chronological range."""
    if window_stride < 1:
        raise ShapeError(f"window_stride must be >= 1, got {window_stride}")
    span = len(index_range)
    if span < l + h:
        raise ShapeError(f"range of {span} rows cannot fit l + h = {l + h}")
    n_per_channel = (span - l - h) // window_stride + 1
    samples: list[WindowSample] = []
    base = index_range.start
    for c in range(dataset.n_channels):
        col = dataset.values[:, c]
        for w in range(n_per_channel):
            start = base + w * window_stride
            x = col[start:start + l].copy()
            y = col[start + l:start + l + h].copy()
            stats = None
            if normalize:
                _, mean, std = instance_normalize(x)
                stats = (mean, std)
            samples.append(WindowSample(c, x, y, stats))
    return samples


def instance_normalize(x: np.ndarray) -> tuple[np.ndarray, float, float]:
    """Per-window standardization: (x - mean) / (std + 1e-5), population std."""
    x = np.asarray(x, dtype=np.float64)
    mean = float(x.mean())
    std = float(x.std())
    return (x - mean) / (std + NORM_EPS), mean, std


def denormalize(y_norm: np.ndarray, mean: float, std: float) -> np.ndarray:
    return np.asarray(y_norm, dtype=np.float64) * (std + NORM_EPS) + mean


def patch_count(l: int, cfg: PatchConfig) -> int:
    if cfg.patch_len > l:
        raise ShapeError(f"patch_len {cfg.patch_len} exceeds window length {l}")
    base = (l - cfg.patch_len) // cfg.stride + 1
    return base + 1 if cfg.pad_end else base


def patchify(x_norm: np.ndarray, cfg: PatchConfig) -> np.ndarray:
    """Cut a window into overlapping patches; patch i covers
    [i*stride, i*stride + patch_len). With pad_end the series is extended by
    repeating the final value ``stride`` times, adding one extra patch.
    """
    x = np.asarray(x_norm, dtype=np.float64)
    l = x.shape[0]
    p = patch_count(l, cfg)
    if cfg.pad_end:
        x = np.concatenate([x, np.full(cfg.stride, x[-1])])
    out = np.empty((p, cfg.patch_len), dtype=np.float64)
    for i in range(p):
        start = i * cfg.stride
        out[i] = x[start:start + cfg.patch_len]
    return out
