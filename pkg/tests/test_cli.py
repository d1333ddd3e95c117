import json
import subprocess
import sys

import pytest
import yaml

from pqforge.cli import REPORT_BEGIN, REPORT_END, main


@pytest.fixture(scope="module")
def small_config(tmp_path_factory):
    path = tmp_path_factory.mktemp("cfg") / "small.yaml"
    path.write_text(yaml.safe_dump({"pruning": {"pruning_method": "dst", "alpha": 0.5},
                                    "training": {"epochs": 2, "batch_size": 128}}))
    return path


@pytest.fixture(scope="module")
def trained(tmp_path_factory, small_config, fixture_csv):
    out = tmp_path_factory.mktemp("run")
    assert main(["train", "--config", str(small_config), "--data", str(fixture_csv), "--out", str(out)]) == 0
    return out


def test_train_writes_everything(trained, capsys):
    for name in ("config.yaml", "model.json", "data.json", "checkpoint.npz", "model.bundle", "run.jsonl"):
        assert (trained / name).exists(), name
    lines = [json.loads(line) for line in (trained / "run.jsonl").read_text().splitlines()]
    assert [e["type"] for e in lines] == ["epoch", "epoch", "summary"]
    assert lines[-1]["bundle_hash"] and lines[-1]["status"] == "complete"


def test_export_reproduces_the_bundle(trained, tmp_path):
    assert main(["export", str(trained), "--out", str(tmp_path / "again.bundle")]) == 0
    assert (tmp_path / "again.bundle").read_bytes() == (trained / "model.bundle").read_bytes()


def test_eval_and_infer(trained, fixture_csv, tmp_path, capsys):
    assert main(["eval", str(trained / "model.bundle"), "--data", str(fixture_csv)]) == 0
    result = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert result["rows"] == 1000 and 0.2 < result["accuracy"] <= 1.0
    out = tmp_path / "pred.csv"
    assert main(["infer", str(trained / "model.bundle"), "--data", str(fixture_csv), "--out", str(out)]) == 0
    rows = out.read_text().splitlines()
    assert rows[0].startswith("row,prediction,score_0") and len(rows) == 1001
    assert rows[1].split(",")[1] in ("g", "q", "t", "w", "z")


def test_report_writes_tables_and_figures(trained, tmp_path, capsys):
    out = tmp_path / "rep"
    assert main(["report", str(trained / "run.jsonl"), "--out", str(out)]) == 0
    text = capsys.readouterr().out
    body = text.split(REPORT_BEGIN)[1].split(REPORT_END)[0]
    assert "| DST | t |" in body
    for name in ("report.md", "report.csv", "accuracy_vs_ebops.png", "layer_sparsity.png", "training_curves.png"):
        assert (out / name).stat().st_size > 0, name
    assert (out / "accuracy_vs_ebops.png").read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"


def test_template(tmp_path, capsys):
    assert main(["template"]) == 0
    data = yaml.safe_load(capsys.readouterr().out)
    assert list(data["quantization"]["layer_specific"]) == ["dense1", "dense2", "dense3", "dense4"]


def test_tune_smoke(tmp_path, fixture_csv, capsys):
    cfg = tmp_path / "tune.yaml"
    cfg.write_text(yaml.safe_dump({
        "pruning": {"pruning_method": "dst"},
        "training": {"epochs": 1, "batch_size": 256},
        "hpo": {"n_trials": 3, "workers": 2, "sampler": "random", "objectives": ["accuracy", "ebops"],
                "directions": ["maximize", "minimize"],
                "search_space": {"pruning.alpha": {"type": "log_uniform", "low": 1e-3, "high": 1.0}}},
    }))
    assert main(["tune", "--config", str(cfg), "--data", str(fixture_csv), "--out", str(tmp_path / "t")]) == 0
    out = capsys.readouterr().out
    assert "best trial" in out and "pareto front" in out
    events = [json.loads(x) for x in (tmp_path / "t" / "trials.jsonl").read_text().splitlines()]
    assert sum(e["type"] == "trial" for e in events) == 3 and events[-1]["type"] == "study"


def test_preset_by_name(tmp_path, capsys):
    assert main(["template", "--config", "pdp_t"]) == 0
    assert yaml.safe_load(capsys.readouterr().out)["pruning"]["sparsity"] == 0.94


def test_config_error_exit_code(tmp_path, fixture_csv, capsys):
    bad = tmp_path / "bad.yaml"
    bad.write_text("quantization:\n  round_mode: BANANA\n")
    assert main(["train", "--config", str(bad), "--data", str(fixture_csv), "--out", str(tmp_path)]) == 2
    assert "quantization.round_mode" in capsys.readouterr().err


def test_data_error_exit_code(tmp_path, capsys):
    assert main(["train", "--data", str(tmp_path / "missing.csv"), "--out", str(tmp_path)]) == 3
    assert "data error" in capsys.readouterr().err
    assert main(["report", str(tmp_path / "none.jsonl")]) == 3


def test_other_error_exit_code(tmp_path, fixture_csv, capsys):
    broken = tmp_path / "broken.bundle"
    broken.write_bytes(b"garbage")
    assert main(["eval", str(broken), "--data", str(fixture_csv)]) == 1
    assert "BundleError" in capsys.readouterr().err


def test_export_incomplete_run_dir(tmp_path):
    assert main(["export", str(tmp_path)]) == 2


def test_console_script_entry_point():
    done = subprocess.run([sys.executable, "-m", "pqforge.cli", "--help"], capture_output=True, text=True)
    assert done.returncode == 0
    for command in ("train", "tune", "export", "infer", "eval", "template", "report"):
        assert command in done.stdout
