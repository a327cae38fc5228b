"""Run configuration: strict JSON parsing with defaults.

Unknown keys are rejected and every violation names the offending key path,
so a typo in an experiment file cannot silently fall back to a default.
All randomness in a run flows from the single root ``seed``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .data import PatchConfig, patch_count
from .encoder import EncoderConfig
from .errors import ConfigError
from .fusion import FusionConfig
from .text import PoolingStrategy
from .training import TrainConfig

_SCALES = ("normalized", "raw")


@dataclass
class RunConfig:
    seed: int = 0
    out_dir: str | None = None
    series_path: str | None = None
    text_path: str | None = None
    embedding_path: str | None = None
    l: int = 7
    horizons: list[int] = field(default_factory=lambda: [7])
    split: tuple[float, float, float] = (0.7, 0.1, 0.2)
    window_stride: int = 1
    normalize: bool = True
    metrics_scale: str = "normalized"
    patch: PatchConfig = field(default_factory=PatchConfig)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    fusion: FusionConfig = field(default_factory=FusionConfig)
    strategy: str = "mean"
    strategies: list[str] = field(default_factory=lambda: ["mean"])
    d_tx: int = 32
    train: TrainConfig = field(default_factory=TrainConfig)

    def __post_init__(self):
        if not self.horizons:
            raise ConfigError("horizons must be a nonempty list")
        for h in self.horizons:
            if h < 1:
                raise ConfigError(f"horizons entries must be >= 1, got {h}")
        if self.l < 1:
            raise ConfigError(f"l must be >= 1, got {self.l}")
        if self.window_stride < 1:
            raise ConfigError(f"window_stride must be >= 1, got {self.window_stride}")
        if self.metrics_scale not in _SCALES:
            raise ConfigError(f"metrics_scale must be one of {_SCALES}, "
                              f"got {self.metrics_scale!r}")
        if self.d_tx < 1:
            raise ConfigError(f"d_tx must be >= 1, got {self.d_tx}")
        for s in [self.strategy] + list(self.strategies):
            try:
                PoolingStrategy(s)
            except ValueError:
                raise ConfigError(f"unknown pooling strategy {s!r}") from None
        # encoder carries the positional table size implied by l and the patch
        self.encoder.p_max = patch_count(self.l, self.patch)
        self.encoder.patch = self.patch
        # all randomness flows from the single root seed
        self.train.seed = self.seed

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "out_dir": self.out_dir,
            "data": {
                "series_path": self.series_path,
                "text_path": self.text_path,
                "embedding_path": self.embedding_path,
                "l": self.l,
                "horizons": list(self.horizons),
                "split": list(self.split),
                "window_stride": self.window_stride,
                "normalize": self.normalize,
                "metrics_scale": self.metrics_scale,
            },
            "patch": {"patch_len": self.patch.patch_len, "stride": self.patch.stride,
                      "pad_end": self.patch.pad_end},
            "encoder": {"d_ts": self.encoder.d_ts, "n_layers": self.encoder.n_layers,
                        "n_heads": self.encoder.n_heads, "d_ff": self.encoder.d_ff,
                        "activation": self.encoder.activation,
                        "dropout": self.encoder.dropout},
            "fusion": {"d": self.fusion.d, "n_heads": self.fusion.n_heads,
                       "d_ff_head": self.fusion.d_ff_head},
            "text": {"strategy": self.strategy, "strategies": list(self.strategies),
                     "d_tx": self.d_tx},
            "train": {"max_epochs": self.train.max_epochs,
                      "early_stop_delta": self.train.early_stop_delta,
                      "patience": self.train.patience, "lr": self.train.lr,
                      "beta1": self.train.beta1, "beta2": self.train.beta2,
                      "eps_adam": self.train.eps_adam,
                      "batch_size": self.train.batch_size,
                      "loss_kind": self.train.loss_kind},
        }


def _expect(value, types, path: str):
    if types is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{path}: expected a boolean, got {value!r}")
        return value
    if types is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{path}: expected an integer, got {value!r}")
        return value
    if types is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path}: expected a number, got {value!r}")
        return float(value)
    if types is str:
        if not isinstance(value, str):
            raise ConfigError(f"{path}: expected a string, got {value!r}")
        return value
    raise AssertionError(types)


def _opt_str(value, path: str):
    return None if value is None else _expect(value, str, path)


def _section(obj: dict, name: str, known: dict) -> dict:
    """Pick known keys out of one config section, rejecting anything else."""
    raw = obj.get(name, {})
    if not isinstance(raw, dict):
        raise ConfigError(f"{name}: expected an object")
    unknown = set(raw) - set(known)
    if unknown:
        raise ConfigError(f"unknown key {name}.{sorted(unknown)[0]}")
    out = {}
    for key, kind in known.items():
        if key not in raw:
            continue
        path = f"{name}.{key}"
        if kind == "opt_str":
            out[key] = _opt_str(raw[key], path)
        elif kind == "opt_int":
            out[key] = None if raw[key] is None else _expect(raw[key], int, path)
        elif kind == "int_list":
            if not isinstance(raw[key], list):
                raise ConfigError(f"{path}: expected a list of integers")
            out[key] = [_expect(v, int, path) for v in raw[key]]
        elif kind == "str_list":
            if not isinstance(raw[key], list):
                raise ConfigError(f"{path}: expected a list of strings")
            out[key] = [_expect(v, str, path) for v in raw[key]]
        elif kind == "float3":
            if not isinstance(raw[key], list) or len(raw[key]) != 3:
                raise ConfigError(f"{path}: expected a list of three numbers")
            out[key] = tuple(_expect(v, float, path) for v in raw[key])
        else:
            out[key] = _expect(raw[key], kind, path)
    return out


def parse_config(obj: dict) -> RunConfig:
    if not isinstance(obj, dict):
        raise ConfigError("config root must be a JSON object")
    top_known = {"seed", "out_dir", "data", "patch", "encoder", "fusion", "text", "train"}
    unknown = set(obj) - top_known
    if unknown:
        raise ConfigError(f"unknown key {sorted(unknown)[0]}")

    data = _section(obj, "data", {
        "series_path": "opt_str", "text_path": "opt_str", "embedding_path": "opt_str",
        "l": int, "horizons": "int_list", "split": "float3", "window_stride": int,
        "normalize": bool, "metrics_scale": str})
    patch = _section(obj, "patch", {"patch_len": int, "stride": int, "pad_end": bool})
    encoder = _section(obj, "encoder", {
        "d_ts": int, "n_layers": int, "n_heads": int, "d_ff": int,
        "activation": str, "dropout": float})
    fusion = _section(obj, "fusion", {"d": "opt_int", "n_heads": int, "d_ff_head": "opt_int"})
    text = _section(obj, "text", {"strategy": str, "strategies": "str_list", "d_tx": int})
    train = _section(obj, "train", {
        "max_epochs": int, "early_stop_delta": float, "patience": int, "lr": float,
        "beta1": float, "beta2": float, "eps_adam": float, "batch_size": int,
        "loss_kind": str})

    def build(section, cls, kwargs):
        try:
            return cls(**kwargs)
        except ConfigError as exc:
            raise ConfigError(f"{section}.{exc}") from None
        except Exception as exc:  # ShapeError from sub-config invariants
            raise ConfigError(f"{section}.{exc}") from None

    patch_cfg = build("patch", PatchConfig, patch)
    encoder_cfg = build("encoder", EncoderConfig, encoder)
    fusion_cfg = build("fusion", FusionConfig, fusion)
    train_cfg = build("train", TrainConfig, train)

    kwargs = dict(
        seed=_expect(obj.get("seed", 0), int, "seed"),
        out_dir=_opt_str(obj.get("out_dir"), "out_dir"),
        patch=patch_cfg, encoder=encoder_cfg, fusion=fusion_cfg, train=train_cfg)
    kwargs.update({k: v for k, v in data.items()})
    kwargs.update({k: v for k, v in text.items()})
    return RunConfig(**kwargs)


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    try:
        obj = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from None
    return parse_config(obj)


def dump_config(cfg: RunConfig, path: str | Path) -> None:
    Path(path).write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n",
                          encoding="utf-8")
