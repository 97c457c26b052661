"""Exit codes and wiring of the command-line surface."""

import json
import os

import numpy as np
import pytest

from mdllens.cli import main
from mdllens.metrics import PredictionLog, write_prediction_log
from mdllens.similarity import RepresentationMatrix, write_representation_csv


@pytest.fixture(scope="module")
def micro_config(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli_grid")
    doc = {
        "out_dir": str(root / "artifacts"),
        "trials": 1,
        "widths": [0.25],
        "weightings": ["uniform"],
        "pairings": [["a", "b"]],
        "arms": {"mdl": True, "transfer_learning": False},
        "probe": {"per_class": 2, "seed": 0},
        "train": {"single_epochs": 1, "joint_epochs": 1, "batch_size": 32},
        "domains": [
            {
                "name": name,
                "num_classes": 3,
                "train_per_class": 6,
                "source": {"type": "synthetic", "shift_seed": s, "noise_std": 0.1, "test_per_class": 3},
            }
            for name, s in (("a", 0), ("b", 3))
        ],
    }
    path = root / "grid.json"
    path.write_text(json.dumps(doc))
    return str(path), doc


class TestExitCodes:
    def test_usage_error_is_1(self, capsys):
        assert main(["plan"]) == 1  # missing --config
        assert main(["frobnicate"]) == 1

    def test_config_error_is_1(self, tmp_path, capsys):
        bad = tmp_path / "bad.json"
        bad.write_text(json.dumps({"out_dir": "x"}))  # missing required keys
        assert main(["plan", "--config", str(bad)]) == 1

    def test_analyze_before_run_is_3(self, micro_config, tmp_path, capsys):
        path, _ = micro_config
        assert main(["analyze", "--config", path, "--out", str(tmp_path / "rep")]) == 3

    def test_run_failure_is_2(self, tmp_path, capsys):
        doc = {
            "out_dir": str(tmp_path / "artifacts"),
            "trials": 1,
            "widths": [0.25],
            "pairings": [["broken"]],
            "train": {"single_epochs": 1},
            "domains": [
                {
                    "name": "broken",
                    "num_classes": 2,
                    "train_per_class": 2,
                    "source": {
                        "type": "image_folder",
                        "train_root": str(tmp_path / "missing"),
                        "test_root": str(tmp_path / "missing"),
                    },
                }
            ],
        }
        cfg = tmp_path / "grid.json"
        cfg.write_text(json.dumps(doc))
        assert main(["run", "--config", str(cfg)]) == 2


class TestHappyPath:
    def test_plan_run_analyze(self, micro_config, tmp_path, capsys):
        path, doc = micro_config
        assert main(["plan", "--config", path]) == 0
        out = capsys.readouterr().out
        assert "planned 3 runs" in out  # 2 singles + 1 joint
        assert main(["run", "--config", path, "--workers", "1"]) == 0
        assert main(["run", "--config", path, "--resume"]) == 0  # no-op resume
        rep = tmp_path / "report"
        assert main(["analyze", "--config", path, "--out", str(rep), "--no-figures"]) == 0
        assert os.path.isfile(rep / "tables" / "metrics_summary.csv")

    def test_probe_manifest(self, micro_config, tmp_path, capsys):
        path, _ = micro_config
        out = tmp_path / "manifest.csv"
        assert main(["probe", "--config", path, "--out", str(out)]) == 0
        lines = out.read_text().splitlines()
        assert len(lines) == 2 * 3 * 2  # domains x classes x per_class

    def test_metrics_command(self, tmp_path, capsys):
        base = PredictionLog("base", "d", [("s0", 0, 0), ("s1", 1, 0), ("s2", 1, 1)])
        joint = PredictionLog("joint", "d", [("s0", 0, 1), ("s1", 1, 1), ("s2", 1, 1)])
        bp, jp = tmp_path / "b.jsonl", tmp_path / "m.jsonl"
        write_prediction_log(base, bp)
        write_prediction_log(joint, jp)
        assert main(["metrics", "--baseline", str(bp), "--mdl", str(jp)]) == 0
        out = capsys.readouterr().out.splitlines()
        assert out[0].startswith("model_id,domain,perfgain")
        fields = out[1].split(",")
        assert fields[0] == "joint"
        assert float(fields[2]) == pytest.approx(0.0)  # 2 right both times

    def test_cka_command(self, tmp_path, capsys):
        rng = np.random.default_rng(0)
        x = rng.normal(size=(20, 4))
        a = RepresentationMatrix("a", [f"s{i}" for i in range(20)], x)
        b = RepresentationMatrix("b", [f"s{i}" for i in range(20)], x @ np.linalg.qr(rng.normal(size=(4, 4)))[0])
        write_representation_csv(a, tmp_path / "a.csv")
        write_representation_csv(b, tmp_path / "b.csv")
        assert main(["cka", "--reps-a", str(tmp_path / "a.csv"), "--reps-b", str(tmp_path / "b.csv")]) == 0
        val = float(capsys.readouterr().out.strip())
        assert val == pytest.approx(1.0, abs=1e-6)
