import json
from pathlib import Path

import numpy as np
import pytest

from textfusion.cli import run
from textfusion.config import RunConfig, dump_config, load_config, parse_config
from textfusion.errors import ConfigError


class TestConfig:
    def test_empty_object_gives_defaults(self):
        cfg = parse_config({})
        assert cfg.l == 7
        assert cfg.horizons == [7]
        assert cfg.train.max_epochs == 100
        assert cfg.train.early_stop_delta == 1e-4
        assert cfg.encoder.p_max == 3

    def test_unknown_key_rejected_with_path(self):
        with pytest.raises(ConfigError, match="trian"):
            parse_config({"trian": {}})
        with pytest.raises(ConfigError, match="train.max_epoch"):
            parse_config({"train": {"max_epoch": 10}})

    def test_invariant_violation_names_key(self):
        with pytest.raises(ConfigError, match="train.max_epochs"):
            parse_config({"train": {"max_epochs": 0}})

    def test_type_mismatch_names_key(self):
        with pytest.raises(ConfigError, match="encoder.d_ts"):
            parse_config({"encoder": {"d_ts": "big"}})
        with pytest.raises(ConfigError, match="data.normalize"):
            parse_config({"data": {"normalize": 1}})

    def test_shipped_config_files_load(self):
        root = Path(__file__).resolve().parents[1]
        l7 = load_config(root / "configs" / "l7.json")
        assert l7.l == 7
        assert l7.horizons == [7, 14, 21, 28, 35]
        assert l7.train.max_epochs == 100
        assert l7.train.early_stop_delta == 1e-4
        assert l7.encoder.p_max == 3
        l9 = load_config(root / "configs" / "l9.json")
        assert l9.l == 9
        assert l9.horizons == [1, 3, 9, 12, 15]
        assert l9.encoder.p_max == 4

    def test_round_trip_equality(self, tmp_path):
        cfg = parse_config({"seed": 11, "data": {"l": 9, "horizons": [3, 9]},
                            "encoder": {"d_ts": 16, "n_heads": 2},
                            "train": {"lr": 0.01}})
        path = tmp_path / "cfg.json"
        dump_config(cfg, path)
        again = load_config(path)
        assert again == cfg

    def test_root_seed_flows_into_training(self):
        cfg = parse_config({"seed": 42})
        assert cfg.train.seed == 42

    def test_empty_horizons_rejected(self):
        with pytest.raises(ConfigError, match="horizons"):
            parse_config({"data": {"horizons": []}})

    def test_bad_strategy_rejected(self):
        with pytest.raises(ConfigError, match="strategy"):
            parse_config({"text": {"strategy": "max"}})


class TestCli:
    def test_unknown_flag_exits_1(self, capsys):
        assert run(["gen-synthetic", "--bogus"]) == 1
        assert "usage" in capsys.readouterr().err

    def test_unknown_command_exits_1(self):
        assert run(["frobnicate"]) == 1

    def test_gen_synthetic_deterministic(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        args = ["gen-synthetic", "--seed", "7", "--channels", "4", "--regimes", "4",
                "--periods", "3"]
        assert run(args + ["--out", str(a)]) == 0
        assert run(args + ["--out", str(b)]) == 0
        for name in ("series.csv", "texts.jsonl", "embeddings.bin"):
            assert (a / name).read_bytes() == (b / name).read_bytes()

    def test_grad_check_passes(self, capsys):
        assert run(["grad-check", "--seed", "1"]) == 0
        out = capsys.readouterr().out
        assert "max relative error" in out
        worst = float(out.strip().splitlines()[-1].split(":")[1])
        assert worst < 1e-4

    def test_train_evaluate_cycle(self, tmp_path):
        data_dir = tmp_path / "data"
        assert run(["gen-synthetic", "--seed", "3", "--channels", "4", "--regimes", "2",
                    "--periods", "10", "--out", str(data_dir)]) == 0
        cfg = {
            "seed": 3,
            "data": {"series_path": str(data_dir / "series.csv"),
                     "text_path": str(data_dir / "texts.jsonl"),
                     "embedding_path": str(data_dir / "embeddings.bin"),
                     "l": 7, "horizons": [7], "window_stride": 14,
                     "metrics_scale": "raw"},
            "encoder": {"d_ts": 16, "n_layers": 1, "n_heads": 2, "d_ff": 32},
            "train": {"max_epochs": 2, "batch_size": 16, "lr": 0.001},
        }
        cfg_path = tmp_path / "cfg.json"
        cfg_path.write_text(json.dumps(cfg))
        run_dir = tmp_path / "run"
        assert run(["train", "--config", str(cfg_path), "--out", str(run_dir)]) == 0
        assert (run_dir / "checkpoint.bin").exists()
        log = json.loads((run_dir / "train_log.json").read_text())
        assert len(log) == 2

        eval_dir = tmp_path / "eval"
        assert run(["evaluate", "--config", str(cfg_path),
                    "--checkpoint", str(run_dir / "checkpoint.bin"),
                    "--out", str(eval_dir)]) == 0
        metrics = json.loads((eval_dir / "metrics.json").read_text())
        assert metrics["variant"] == "with_text"
        assert metrics["horizon"] == 7
        assert metrics["scale"] == "raw"
        assert metrics["mae"] >= 0

    def test_ablate_and_export_report(self, tmp_path):
        data_dir = tmp_path / "data"
        assert run(["gen-synthetic", "--seed", "5", "--channels", "4", "--regimes", "2",
                    "--periods", "10", "--out", str(data_dir)]) == 0
        cfg = {
            "seed": 5,
            "data": {"series_path": str(data_dir / "series.csv"),
                     "embedding_path": str(data_dir / "embeddings.bin"),
                     "l": 7, "window_stride": 14},
            "encoder": {"d_ts": 16, "n_layers": 1, "n_heads": 2, "d_ff": 32},
            "text": {"strategies": ["mean", "bos"]},
            "train": {"max_epochs": 2, "batch_size": 16, "lr": 0.001},
        }
        cfg_path = tmp_path / "cfg.json"
        cfg_path.write_text(json.dumps(cfg))
        out_dir = tmp_path / "ablation"
        assert run(["ablate", "--config", str(cfg_path), "--horizons", "3,7",
                    "--out", str(out_dir)]) == 0
        report = json.loads((out_dir / "report.json").read_text())
        assert report["horizons"] == [3, 7]
        assert len(report["cells"]) == 6  # 2 horizons x (wo + 2 strategies)
        assert set(report["best"]["mae"]) == {"3", "7"}
        mae_rows = (out_dir / "mae.csv").read_text().strip().splitlines()
        assert len(mae_rows) == 4  # header + 3 variants

        export_dir = tmp_path / "export"
        assert run(["export-report", "--report", str(out_dir / "report.json"),
                    "--out", str(export_dir)]) == 0
        assert (export_dir / "mae.csv").read_text() == (out_dir / "mae.csv").read_text()

    def test_missing_series_path_is_validation_error(self, tmp_path):
        assert run(["train", "--out", str(tmp_path / "x")]) == 1

    def test_missing_config_file_is_validation_error(self, tmp_path):
        assert run(["train", "--config", str(tmp_path / "nope.json"),
                    "--out", str(tmp_path / "x")]) == 1

    def test_idempotent_ablate(self, tmp_path):
        data_dir = tmp_path / "data"
        run(["gen-synthetic", "--seed", "9", "--channels", "4", "--regimes", "2",
             "--periods", "8", "--out", str(data_dir)])
        cfg = {
            "seed": 9,
            "data": {"series_path": str(data_dir / "series.csv"),
                     "embedding_path": str(data_dir / "embeddings.bin"),
                     "l": 7, "horizons": [3], "window_stride": 10},
            "encoder": {"d_ts": 8, "n_layers": 1, "n_heads": 2, "d_ff": 16},
            "train": {"max_epochs": 2, "batch_size": 8, "lr": 0.001},
        }
        cfg_path = tmp_path / "cfg.json"
        cfg_path.write_text(json.dumps(cfg))
        d1, d2 = tmp_path / "r1", tmp_path / "r2"
        assert run(["ablate", "--config", str(cfg_path), "--out", str(d1)]) == 0
        assert run(["ablate", "--config", str(cfg_path), "--out", str(d2)]) == 0
        assert (d1 / "report.json").read_bytes() == (d2 / "report.json").read_bytes()
