import json
import shutil

import numpy as np
import pytest

from hct.cli import RunConfig, apply_settings, main
from hct.dataio import DiagnosisLabel, serialize_walk
from hct.errors import ConfigError
from hct.synthetic import synthetic_walk


def run(argv, capsys):
    code = main(argv)
    out, err = capsys.readouterr()
    return code, out, err


def write_cfg(tmp_path, text):
    path = tmp_path / "run.cfg"
    path.write_text(text)
    return str(path)


QUICK = "# small and fast\nmax_epochs = 2\nbatch_size = 32\npatience = 2\n"


def test_config_parsing():
    run_cfg = apply_settings(RunConfig(), {"seed": "3", "max_epochs": "7", "conv_channels": "4, 8, 8, 1",
                                           "dropout_fc": "false", "learning_rate": "0.01"})
    assert run_cfg.seed == 3
    assert run_cfg.train_config().max_epochs == 7
    assert run_cfg.train_config().learning_rate == 0.01
    assert run_cfg.model_config().conv_channels == (4, 8, 8, 1)
    assert run_cfg.model_config().dropout_fc is False
    with pytest.raises(ConfigError):
        apply_settings(RunConfig(), {"colour": "red"})
    with pytest.raises(ConfigError):
        apply_settings(RunConfig(), {"max_epochs": "many"})


def test_ingest_summary(corpus_dir, capsys):
    code, out, _ = run(["ingest", "--data", str(corpus_dir)], capsys)
    assert code == 0
    summary = json.loads(out)
    assert summary["walks"] == 44 and summary["subjects"] == 22
    assert summary["classes"]["PD"]["walks"] == 24
    assert summary["classes"]["healthy"]["walks"] == 20
    assert summary["classes"]["H&Y 2.5"]["subjects"] == 4
    assert summary["segments"] == 44 * 4


def test_ingest_errors(tmp_path, corpus_dir, capsys):
    empty = tmp_path / "empty"
    empty.mkdir()
    code, _, err = run(["ingest", "--data", str(empty)], capsys)
    assert code != 0 and err.startswith("hct: error[config]:") and "no walk files found" in err
    mixed = tmp_path / "mixed"
    shutil.copytree(corpus_dir, mixed)
    (mixed / "SyPt99_01.txt").write_text("0.0 1 2\n")
    code, out, _ = run(["ingest", "--data", str(mixed)], capsys)
    assert code == 0
    assert [s["file"] for s in json.loads(out)["skipped"]] == ["SyPt99_01.txt"]


def test_data_dir_from_environment(corpus_dir, capsys, monkeypatch):
    monkeypatch.setenv("HCT_DATA_DIR", str(corpus_dir))
    code, out, _ = run(["ingest"], capsys)
    assert code == 0 and json.loads(out)["walks"] == 44


def test_train_is_reproducible(tmp_path, corpus_dir, capsys):
    cfg = write_cfg(tmp_path, QUICK)
    outs = []
    for name in ("a", "b"):
        out = tmp_path / name
        code, _, err = run(["train", "--config", cfg, "--data", str(corpus_dir), "--seed", "1",
                            "--task", "detection", "--out", str(out)], capsys)
        assert code == 0, err
        outs.append(out)
    assert (outs[0] / "model.hct").read_bytes() == (outs[1] / "model.hct").read_bytes()
    assert (outs[0] / "history.csv").read_text() == (outs[1] / "history.csv").read_text()
    manifest = json.loads((outs[0] / "manifest.json").read_text())
    assert manifest["seed"] == 1 and len(manifest["inputs_sha256"]) == 64
    assert manifest["config"]["train"]["max_epochs"] == 2


def test_train_errors(tmp_path, corpus_dir, capsys):
    code, _, err = run(["train", "--data", str(corpus_dir), "--task", "detection", "--out", str(tmp_path / "x")],
                       capsys)
    assert code != 0 and "error[config]" in err and "seed" in err
    nolabels = tmp_path / "nolabels"
    shutil.copytree(corpus_dir, nolabels)
    (nolabels / "labels.csv").unlink()
    code, _, err = run(["train", "--data", str(nolabels), "--seed", "1", "--out", str(tmp_path / "y")], capsys)
    assert code != 0 and "error[config]" in err and "label" in err
    assert not (tmp_path / "y").exists()
    controls = tmp_path / "controls"
    controls.mkdir()
    for path in corpus_dir.glob("SyCo*.txt"):
        shutil.copy(path, controls)
    shutil.copy(corpus_dir / "labels.csv", controls)
    code, _, err = run(["train", "--data", str(controls), "--seed", "1", "--task", "staging",
                        "--out", str(tmp_path / "z")], capsys)
    assert code != 0 and "error[contract]" in err


def test_cv_outputs_and_overwrite(tmp_path, corpus_dir, capsys):
    cfg = write_cfg(tmp_path, QUICK + "folds = 2\n")
    out = tmp_path / "cv"
    args = ["cv", "--config", cfg, "--data", str(corpus_dir), "--seed", "2", "--task", "detection",
            "--out", str(out)]
    code, stdout, err = run(args, capsys)
    assert code == 0, err
    assert json.loads(stdout)["task"] == "detection"
    for name in ("report.json", "folds_detection.csv", "confusion_detection.csv",
                 "confusion_detection_fold1.csv", "manifest.json", "history_detection_fold0.csv"):
        assert (out / name).is_file(), name
    report = (out / "report.json").read_bytes()
    code, _, err = run(args, capsys)
    assert code != 0 and "--overwrite" in err
    code, _, err = run(args + ["--overwrite", "--jobs", "2"], capsys)
    assert code == 0
    assert (out / "report.json").read_bytes() == report


def test_cv_too_many_folds(tmp_path, corpus_dir, capsys):
    code, _, err = run(["cv", "--data", str(corpus_dir), "--seed", "1", "--folds", "11",
                        "--out", str(tmp_path / "cv")], capsys)
    assert code != 0 and err.startswith("hct: error[config]:")


@pytest.fixture(scope="module")
def toy_models(tmp_path_factory, corpus_dir):
    root = tmp_path_factory.mktemp("models")
    cfg = root / "run.cfg"
    cfg.write_text("max_epochs = 8\nbatch_size = 32\npatience = 8\nlearning_rate = 0.003\n")
    paths = {}
    for task in ("detection", "staging"):
        assert main(["train", "--config", str(cfg), "--data", str(corpus_dir), "--seed", "0",
                     "--task", task, "--out", str(root / task)]) == 0
        paths[task] = root / task / "model.hct"
    return paths


def test_diagnose_control_walk(tmp_path, toy_models, capsys):
    walk = synthetic_walk("SyCo77", "01", DiagnosisLabel(False, 0.0), 600, np.random.default_rng(99))
    path = tmp_path / "SyCo77_01.txt"
    path.write_text(serialize_walk(walk))
    code, out, err = run(["diagnose", "--binary", str(toy_models["detection"]),
                          "--staging", str(toy_models["staging"]), str(path)], capsys)
    assert code == 0, err
    record = json.loads(out)
    assert record["diagnosis"] == "healthy"
    assert sum(record["detection"]["votes"].values()) == 6
    assert record["staging"] is None


def test_diagnose_errors(tmp_path, toy_models, capsys):
    walk = synthetic_walk("SyPt77", "01", DiagnosisLabel(True, 3.0), 99, np.random.default_rng(1))
    short = tmp_path / "SyPt77_01.txt"
    short.write_text(serialize_walk(walk))
    code, _, err = run(["diagnose", "--binary", str(toy_models["detection"]),
                        "--staging", str(toy_models["staging"]), str(short)], capsys)
    assert code != 0 and "no segments" in err
    code, _, err = run(["diagnose", "--binary", str(toy_models["detection"]),
                        "--staging", str(toy_models["detection"]), str(short)], capsys)
    assert code != 0 and "error[task-mismatch]" in err
