"""Command-line entry point.

Subcommands: train, evaluate, ablate, gen-synthetic, grad-check,
export-report. Logs go to stderr, results to files under --out. Exit codes:
0 success, 1 validation error (bad flags, config, or input files), 2
runtime failure. TFH_THREADS caps the worker count for ablation cells.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from .config import RunConfig, dump_config, load_config
from .data import load_dataset, make_windows, split_chronological, write_series_csv, \
    write_text_sidecar
from .errors import ConfigError, TextFusionError, ValidationError
from .evaluation import (AblationSettings, evaluate_model, pooled_text_vectors,
                         run_ablation, write_report_csvs, write_report_json)
from .fusion import WITH_TEXT, WITHOUT_TEXT, build_model
from .gradcheck import run_full_suite
from .synthetic import SyntheticSpec, generate
from .text import read_embedding_file, write_embedding_file
from .training import load_checkpoint, save_checkpoint, train


def _log(msg: str) -> None:
    print(msg, file=sys.stderr)


class _Parser(argparse.ArgumentParser):
    """argparse that prints usage to stderr and exits 1 on bad flags."""

    def error(self, message):
        self.print_usage(sys.stderr)
        raise SystemExit(f"error: {message}")


def _build_parser() -> _Parser:
    parser = _Parser(prog="textfusion")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON run configuration")
        p.add_argument("--seed", type=int, help="override the root seed")
        p.add_argument("--out", help="output directory")

    p = sub.add_parser("train", help="train one model variant")
    common(p)
    p.add_argument("--horizon", type=int, help="forecast horizon (default: first configured)")
    p.add_argument("--no-text", action="store_true", help="train the text-free baseline")
    p.add_argument("--strategy", help="pooling strategy for the text arm")

    p = sub.add_parser("evaluate", help="evaluate a checkpoint on the test split")
    common(p)
    p.add_argument("--checkpoint", required=True)

    p = sub.add_parser("ablate", help="train and compare all variants per horizon")
    common(p)
    p.add_argument("--horizons", help="comma-separated horizon list override")
    p.add_argument("--strategy", action="append", dest="strategies",
                   help="pooling strategy for the text arms (repeatable)")

    p = sub.add_parser("gen-synthetic", help="emit a seeded synthetic dataset")
    common(p)
    p.add_argument("--channels", type=int)
    p.add_argument("--regimes", type=int)
    p.add_argument("--periods", type=int)
    p.add_argument("--noise-sigma", type=float)
    p.add_argument("--input-len", type=int)
    p.add_argument("--horizon", type=int)
    p.add_argument("--d-tx", type=int)

    p = sub.add_parser("grad-check", help="finite-difference gradient verification")
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("export-report", help="re-emit per-metric CSVs from a report")
    p.add_argument("--report", required=True)
    p.add_argument("--out", required=True)
    return parser


def _load_run_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
        cfg.train.seed = args.seed
    if getattr(args, "out", None):
        cfg.out_dir = args.out
    return cfg


def _out_dir(cfg: RunConfig) -> Path:
    if not cfg.out_dir:
        raise ConfigError("an output directory is required (--out or config out_dir)")
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_inputs(cfg: RunConfig, need_text: bool):
    if not cfg.series_path:
        raise ConfigError("data.series_path is required for this command")
    dataset = load_dataset(cfg.series_path, cfg.text_path)
    embeddings = None
    if need_text:
        if not cfg.embedding_path:
            raise ConfigError("data.embedding_path is required for text-fusion runs")
        embeddings = read_embedding_file(cfg.embedding_path)
    return dataset, embeddings


def _cmd_train(args) -> int:
    cfg = _load_run_config(args)
    out = _out_dir(cfg)
    variant = WITHOUT_TEXT if args.no_text else WITH_TEXT
    strategy = args.strategy or cfg.strategy
    horizon = args.horizon or cfg.horizons[0]
    dataset, embeddings = _load_inputs(cfg, need_text=variant == WITH_TEXT)
    tr, va, _ = split_chronological(dataset, cfg.split, cfg.l + horizon)
    kwargs = dict(l=cfg.l, h=horizon, window_stride=cfg.window_stride,
                  normalize=cfg.normalize)
    train_w = make_windows(dataset, tr, **kwargs)
    val_w = make_windows(dataset, va, **kwargs)
    vectors = None
    if variant == WITH_TEXT:
        vectors = pooled_text_vectors(dataset.channel_ids, embeddings, strategy)
    model = build_model(variant, cfg.encoder, cfg.fusion, horizon, cfg.seed,
                        d_tx=cfg.d_tx if variant == WITH_TEXT else None,
                        normalize=cfg.normalize)
    result = train(model, train_w, val_w, vectors, cfg.train,
                   strategy=strategy if variant == WITH_TEXT else None, log_fn=_log)
    save_checkpoint(result.checkpoint, out / "checkpoint.bin")
    (out / "train_log.json").write_text(json.dumps(result.log, indent=2) + "\n")
    dump_config(cfg, out / "run_config.json")
    _log(f"saved checkpoint to {out / 'checkpoint.bin'} "
         f"(best epoch {result.checkpoint.epoch})")
    return 0


def _cmd_evaluate(args) -> int:
    cfg = _load_run_config(args)
    out = _out_dir(cfg)
    ckpt = load_checkpoint(args.checkpoint)
    dataset, embeddings = _load_inputs(cfg, need_text=ckpt.model.variant == WITH_TEXT)
    _, _, te = split_chronological(dataset, cfg.split, cfg.l + ckpt.model.horizon)
    test_w = make_windows(dataset, te, l=cfg.l, h=ckpt.model.horizon,
                          window_stride=cfg.window_stride, normalize=cfg.normalize)
    report = evaluate_model(ckpt, test_w, dataset.channel_ids, embeddings,
                            ckpt.strategy, scale=cfg.metrics_scale)
    from dataclasses import asdict
    (out / "metrics.json").write_text(json.dumps(asdict(report), indent=2,
                                                 sort_keys=True) + "\n")
    _log(f"{report.variant} h={report.horizon}: mae {report.mae:.6f} "
         f"wape {report.wape:.6f} ({report.scale} scale)")
    return 0


def _cmd_ablate(args) -> int:
    cfg = _load_run_config(args)
    out = _out_dir(cfg)
    if args.horizons:
        try:
            cfg.horizons = [int(tok) for tok in args.horizons.split(",") if tok]
        except ValueError:
            raise ConfigError(f"--horizons expects comma-separated integers, "
                              f"got {args.horizons!r}") from None
        if not cfg.horizons:
            raise ConfigError("--horizons produced an empty list")
    if args.strategies:
        cfg.strategies = args.strategies
    dataset, embeddings = _load_inputs(cfg, need_text=bool(cfg.strategies))
    max_workers = int(os.environ.get("TFH_THREADS", "1") or "1")
    settings = AblationSettings(
        l=cfg.l, horizons=cfg.horizons, strategies=cfg.strategies,
        encoder_cfg=cfg.encoder, fusion_cfg=cfg.fusion, train_cfg=cfg.train,
        d_tx=cfg.d_tx, split=cfg.split, window_stride=cfg.window_stride,
        normalize=cfg.normalize, scale=cfg.metrics_scale,
        max_workers=max(1, max_workers))
    report = run_ablation(dataset, embeddings, settings)
    write_report_json(report, out / "report.json")
    write_report_csvs(report, out)
    for metric in ("mae", "wape"):
        for h, winners in report["best"][metric].items():
            _log(f"best {metric} at h={h}: {', '.join(winners)}")
    _log(f"wrote {out / 'report.json'}, {out / 'mae.csv'}, {out / 'wape.csv'}")
    return 0


def _cmd_gen_synthetic(args) -> int:
    cfg = _load_run_config(args)
    out = _out_dir(cfg)
    defaults = SyntheticSpec()
    spec = SyntheticSpec(
        channels=args.channels or defaults.channels,
        regimes=args.regimes or defaults.regimes,
        l=args.input_len or defaults.l,
        h=args.horizon or defaults.h,
        slopes=defaults.slopes if (args.regimes or defaults.regimes) == len(defaults.slopes)
        else tuple(np.linspace(-1.0, 1.0, args.regimes or defaults.regimes)),
        noise_sigma=defaults.noise_sigma if args.noise_sigma is None else args.noise_sigma,
        periods=args.periods or defaults.periods,
        seed=cfg.seed,
        d_tx=args.d_tx or defaults.d_tx)
    dataset, embeddings = generate(spec)
    write_series_csv(dataset, out / "series.csv")
    write_text_sidecar(dataset.texts, out / "texts.jsonl")
    write_embedding_file(embeddings, out / "embeddings.bin")
    _log(f"wrote series.csv, texts.jsonl, embeddings.bin to {out} "
         f"({spec.channels} channels, {dataset.n_steps} steps, seed {spec.seed})")
    return 0


def _cmd_grad_check(args) -> int:
    results = run_full_suite(args.seed)
    for name in sorted(results):
        print(f"{name}: {results[name]:.3e}")
    worst = max(results.values())
    print(f"max relative error: {worst:.3e}")
    if worst >= 1e-4:
        _log("gradient check FAILED (threshold 1e-4)")
        return 2
    return 0


def _cmd_export_report(args) -> int:
    path = Path(args.report)
    try:
        report = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"report file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from None
    if not isinstance(report, dict) or "cells" not in report:
        raise ConfigError(f"{path}: not an ablation report")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    paths = write_report_csvs(report, out)
    _log("wrote " + ", ".join(str(p) for p in paths))
    return 0


_COMMANDS = {
    "train": _cmd_train,
    "evaluate": _cmd_evaluate,
    "ablate": _cmd_ablate,
    "gen-synthetic": _cmd_gen_synthetic,
    "grad-check": _cmd_grad_check,
    "export-report": _cmd_export_report,
}


def run(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        if isinstance(exc.code, str):
            _log(exc.code)
            return 1
        return 0 if exc.code in (0, None) else 1
    try:
        return _COMMANDS[args.command](args)
    except ValidationError as exc:
        _log(f"error: {exc}")
        return 1
    except TextFusionError as exc:
        _log(f"runtime failure: {exc}")
        return 2
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        _log(f"unexpected failure: {type(exc).__name__}: {exc}")
        return 2


def main() -> None:
    sys.exit(run())
