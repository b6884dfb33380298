import csv
import json
import subprocess
import sys

import pytest

from filtlab.cli import main


def test_usage_errors_exit_2(tmp_path, capsys):
    assert main(["run", "--experiment", "bridge-brownian", "--n-steps", "1", "--output-dir", str(tmp_path)]) == 2
    assert "n_steps" in capsys.readouterr().err
    with pytest.raises(SystemExit) as ei:
        main(["run", "--experiment", "nope"])
    assert ei.value.code == 2
    with pytest.raises(SystemExit) as ei:
        main(["run", "--experiment", "bridge-brownian", "--n-paths", "many"])
    assert ei.value.code == 2
    assert main(["run"]) == 2


def test_bad_config_file_exit_2(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["run", "--config", str(bad)]) == 2
    assert "not valid JSON" in capsys.readouterr().err
    lst = tmp_path / "list.json"
    lst.write_text("[1, 2]")
    assert main(["run", "--config", str(lst)]) == 2
    assert main(["run", "--config", str(tmp_path / "missing.json")]) == 2


def test_run_writes_reports_and_config_reruns(tmp_path, capsys):
    out = tmp_path / "a"
    code = main(["run", "--experiment", "nth-jump", "--n-paths", "5000", "--seed", "3", "--output-dir", str(out)])
    assert code == 0
    lines = capsys.readouterr().out.splitlines()
    assert any(l.startswith("ok") and "nth-jump/compensated" in l for l in lines)
    rep = json.loads((out / "report.json").read_text())
    assert set(rep) >= {"version", "config", "reports", "wallclock_seconds"}
    assert rep["config"]["n_paths"] == 5000
    assert json.loads((out / "config.json").read_text()) == rep["config"]
    rows = list(csv.reader(open(out / "reports.csv")))
    assert rows[0] == ["name", "statistic", "stderr", "z", "threshold", "pass"]
    assert len(rows) == len(rep["reports"]) + 1

    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({**rep["config"], "output_dir": str(tmp_path / "b")}))
    assert main(["run", "--config", str(cfg), "--quiet"]) == 0
    rep2 = json.loads((tmp_path / "b" / "report.json").read_text())
    assert rep2["reports"] == rep["reports"]


def test_flags_override_config(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"experiment": "nth-jump", "n_paths": 100000, "seed": 1}))
    out = tmp_path / "o"
    assert main(["run", "--config", str(cfg), "--n-paths", "3000", "--output-dir", str(out), "--quiet"]) in (0, 1)
    rep = json.loads((out / "report.json").read_text())
    assert rep["config"]["n_paths"] == 3000 and rep["config"]["seed"] == 1


def test_output_dir_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("FILTLAB_OUTPUT_DIR", str(tmp_path / "env"))
    assert main(["run", "--experiment", "nth-jump", "--n-paths", "2000", "--quiet"]) == 0
    assert (tmp_path / "env" / "report.json").exists()


def test_statistical_failure_exits_1(tmp_path):
    # the literal equilibrium drift carries no correctness claim: its checks fail
    code = main(["run", "--experiment", "kyle-back", "--drift-variant", "as_printed", "--n-paths", "2048",
                 "--n-steps", "512", "--output-dir", str(tmp_path), "--quiet"])
    assert code == 1


def test_structural_table_written(tmp_path):
    assert main(["run", "--experiment", "structural-default", "--n-paths", "1000", "--n-steps", "256",
                 "--output-dir", str(tmp_path), "--quiet"]) in (0, 1)
    rows = list(csv.reader(open(tmp_path / "structural-default_default_curve.csv")))
    assert rows[0] == ["t", "estimate", "band"]


def test_list_and_module_entry(capsys):
    assert main(["list"]) == 0
    assert "suite" in capsys.readouterr().out
    proc = subprocess.run([sys.executable, "-m", "filtlab", "--version"], capture_output=True, text=True)
    assert proc.returncode == 0 and "filtlab" in proc.stdout
