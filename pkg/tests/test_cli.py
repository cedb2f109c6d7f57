import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from geogrow.cli import main

FAST_OVERRIDES = {
    "train": {"epochs": 3, "patience": 3, "batch_size": 64},
    "experiment": {"aggregations": ["gg"], "methods": ["lr"], "seeds": [0, 1],
                   "lr_epochs": 40},
    "sampling": {"negative_ratio": 3, "history_len": 8},
    "synth": {
        "name": "clitown",
        "study_area": {"lat_min": 52.34, "lat_max": 52.42,
                       "lon_min": 9.66, "lon_max": 9.82},
        "hotspots": [
            {"center_lat": 52.36, "center_lon": 9.70, "sigma_deg": 0.002,
             "events": 50, "active_hours": [7, 8], "junction_level": 0.9},
            {"center_lat": 52.40, "center_lon": 9.78, "sigma_deg": 0.002,
             "events": 50, "active_hours": [18, 19], "junction_level": 0.2},
        ],
    },
}


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    out = tmp_path_factory.mktemp("cli")
    config_path = out / "config.json"
    config_path.write_text(json.dumps({**FAST_OVERRIDES, "out_dir": str(out)}),
                           encoding="utf-8")
    code = main(["synth", "--config", str(config_path), "--seed", "11"])
    assert code == 0
    # Point the follow-up phases at the generated data.
    doc = json.loads(config_path.read_text(encoding="utf-8"))
    doc["study_area"] = {"name": "clitown", "lat_min": 52.34, "lat_max": 52.42,
                         "lon_min": 9.66, "lon_max": 9.82}
    doc["data"] = {"accidents_csv": str(out / "accidents.csv"),
                   "regional_csv": str(out / "regional.csv")}
    doc["radius"] = {"center_lat": 52.38, "center_lon": 9.74,
                     "radii_m": [4000.0, 20000.0]}
    config_path.write_text(json.dumps(doc), encoding="utf-8")
    return out, config_path


def test_synth_outputs(workspace):
    out, _ = workspace
    assert (out / "accidents.csv").exists()
    assert (out / "regional.csv").exists()
    truth = json.loads((out / "truth.json").read_text(encoding="utf-8"))
    assert truth["total_events"] == 100


def test_synth_deterministic(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps(FAST_OVERRIDES), encoding="utf-8")
    for sub in ("a", "b"):
        assert main(["synth", "--config", str(cfg), "--seed", "9",
                     "--out", str(tmp_path / sub)]) == 0
    assert ((tmp_path / "a" / "accidents.csv").read_bytes()
            == (tmp_path / "b" / "accidents.csv").read_bytes())
    assert ((tmp_path / "a" / "regional.csv").read_bytes()
            == (tmp_path / "b" / "regional.csv").read_bytes())


def test_cluster_command(workspace):
    out, config = workspace
    assert main(["cluster", "--config", str(config), "--seed", "3"]) == 0
    doc = json.loads((out / "cluster_model.json").read_text(encoding="utf-8"))
    assert doc["params"]["distance_threshold_m"] == 400.0
    assert len(doc["clusters"]) >= 2
    first = (out / "cluster_model.json").read_bytes()
    assert main(["cluster", "--config", str(config), "--seed", "3"]) == 0
    assert (out / "cluster_model.json").read_bytes() == first


def test_cluster_rejects_bad_threshold(workspace, tmp_path):
    out, config = workspace
    doc = json.loads(Path(config).read_text(encoding="utf-8"))
    doc["aggregation"] = {"distance_threshold_m": -5.0}
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps(doc), encoding="utf-8")
    assert main(["cluster", "--config", str(bad)]) == 2


def test_missing_data_is_config_error(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({
        "study_area": {"lat_min": 52.0, "lat_max": 52.1, "lon_min": 9.0,
                       "lon_max": 9.1},
        "data": {"accidents_csv": str(tmp_path / "nope.csv")},
    }), encoding="utf-8")
    assert main(["cluster", "--config", str(cfg)]) == 2


def test_featurize_then_train(workspace):
    out, config = workspace
    assert main(["featurize", "--config", str(config)]) == 0
    assert (out / "samples.npz").exists()
    meta = json.loads((out / "samples_meta.json").read_text(encoding="utf-8"))
    assert meta["aggregation"] == "gg"

    assert main(["train", "--config", str(config), "--method", "acap",
                 "--seed", "1"]) == 0
    ckpt = json.loads((out / "checkpoint.json").read_text(encoding="utf-8"))
    assert ckpt["format"] == "geogrow-checkpoint"
    assert ckpt["meta"]["method"] == "acap"
    assert (out / "train_log.csv").exists()

    assert main(["train", "--config", str(config), "--method", "lr"]) == 0
    ckpt = json.loads((out / "checkpoint.json").read_text(encoding="utf-8"))
    assert ckpt["format"] == "geogrow-lr"


def test_train_without_featurize_is_config_error(tmp_path, workspace):
    _, config = workspace
    assert main(["train", "--config", str(config), "--out", str(tmp_path)]) == 2


def test_evaluate_emits_report_and_figures(workspace):
    out, config = workspace
    assert main(["evaluate", "--config", str(config)]) == 0
    report = json.loads((out / "report.json").read_text(encoding="utf-8"))
    assert "gg/lr" in report["mean_f1"]
    assert (out / "scores.csv").exists()
    assert (out / "f1_matrix.csv").exists()
    assert (out / "f1_matrix.png").stat().st_size > 1000
    matrix = (out / "f1_matrix.csv").read_text(encoding="utf-8").splitlines()
    assert matrix[0] == "aggregation,lr"


def test_radius_command(workspace):
    out, config = workspace
    assert main(["radius", "--config", str(config), "--method", "lr"]) == 0
    doc = json.loads((out / "radius.json").read_text(encoding="utf-8"))
    assert doc["radii_m"] == [4000.0, 20000.0]
    assert (out / "radius_curve.csv").exists()
    assert (out / "radius_f1.png").stat().st_size > 1000


def test_ablation_command(workspace):
    out, config = workspace
    assert main(["ablation", "--config", str(config)]) == 0
    doc = json.loads((out / "ablation.json").read_text(encoding="utf-8"))
    assert set(doc["group_f1"]) == {"regional", "temporal", "accident"}
    assert (out / "ablation_f1.png").stat().st_size > 1000


def test_help_lists_commands_and_flags():
    result = subprocess.run([sys.executable, "-m", "geogrow.cli", "--help"],
                            capture_output=True, text=True)
    assert result.returncode == 0
    for cmd in ("synth", "cluster", "featurize", "train", "evaluate",
                "radius", "ablation"):
        assert cmd in result.stdout
    result = subprocess.run([sys.executable, "-m", "geogrow.cli", "evaluate",
                             "--help"], capture_output=True, text=True)
    for flag in ("--config", "--seed", "--out", "--aggregation", "--method"):
        assert flag in result.stdout


def test_unknown_flag_fatal():
    result = subprocess.run([sys.executable, "-m", "geogrow.cli", "evaluate",
                             "--frobnicate"], capture_output=True, text=True)
    assert result.returncode == 2


def test_bad_config_json_rejected(tmp_path):
    cfg = tmp_path / "broken.json"
    cfg.write_text("{not json", encoding="utf-8")
    assert main(["synth", "--config", str(cfg)]) == 2
