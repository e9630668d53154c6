import json
import subprocess
import sys

import pytest

from fanproj.cli import main
from fanproj.experiments import machine_section
from fanproj.sets import load_points


def test_generate_and_check(tmp_path):
    f = tmp_path / "ap.txt"
    assert main(["generate", "ap", "--m", "10", "--s", "0.5", "--out", str(f), "--quiet"]) == 0
    A = load_points(f)
    assert A.scale.m == 10
    out = tmp_path / "check.txt"
    assert main(["check", str(f), "--s", "0.5", "--out", str(out), "--quiet"]) == 0
    assert "delta_separated True" in out.read_text()


def test_check_flags_concentrated_set(tmp_path):
    f = tmp_path / "fig.txt"
    assert main(["generate", "figure3", "--m", "8", "--out", str(f), "--quiet"]) == 0
    assert main(["check", str(f), "--s", "0.2", "--max-constant", "1", "--out", str(tmp_path / "c"), "--quiet"]) == 1


def test_generate_lattice(tmp_path):
    f = tmp_path / "grid.txt"
    assert main(["generate", "grid", "--n", "64", "--s", "0.75", "--out", str(f), "--quiet"]) == 0
    assert "[pairs]" in f.read_text()
    out = tmp_path / "bad.csv"
    trace = tmp_path / "trace.txt"
    code = main(["discrete", "--points", str(f), "--s", "0.75", "--out", str(out), "--trace", str(trace), "--quiet"])
    assert code in (0, 1)
    assert out.read_text().startswith("slope,projection_count,pair_count")
    assert "chosen j=" in trace.read_text()


def test_sweep_point_file(tmp_path):
    f = tmp_path / "ap.txt"
    main(["generate", "ap", "--m", "8", "--out", str(f), "--quiet"])
    out = tmp_path / "sweep.csv"
    assert main(["sweep", str(f), "--s", "0.55", "--T", "0,0.0625,1", "--out", str(out), "--quiet"]) == 0
    rows = out.read_text().splitlines()
    assert rows[0] == "t,entropy,threshold,exceptional_flag" and len(rows) == 4


def test_pipeline_witness(tmp_path):
    out = tmp_path / "p.json"
    # three parameters are far below the cardinality budget, so validate flags and the exit code is 1
    assert main(["pipeline", "--m", "10", "--E", "sqrtdelta", "--out", str(out), "--quiet"]) == 1
    d = json.loads(out.read_text())
    assert d["mode"] == "witness"
    assert [r["name"] for r in d["stages"] if r["status"] == "flag"] == ["validate"]


def test_pipeline_diagnosis_exit_one(tmp_path):
    out = tmp_path / "p.json"
    assert main(["pipeline", "--m", "10", "--E", "1", "--out", str(out), "--quiet"]) == 1
    d = json.loads(out.read_text())
    assert d["mode"] == "diagnosis"


def test_pipeline_bad_s_exit_two(tmp_path, capsys):
    assert main(["pipeline", "--m", "8", "--s", "0.7", "--out", str(tmp_path / "x"), "--quiet"]) == 2
    assert "admissible" in capsys.readouterr().err


def test_config_run_and_plot_data(tmp_path):
    cfg = tmp_path / "riesz.cfg"
    cfg.write_text("kind = riesz\nscales = 6,7,8\ns = 0.5\n")
    out = tmp_path / "reports"
    assert main(["sweep", "--config", str(cfg), "--out", str(out), "--quiet"]) == 0
    assert machine_section((out / "summary.txt").read_text())["fit"]["slope"] > 1.5
    plots = tmp_path / "plots"
    assert main(["plot-data", str(out / "summary.txt"), "--out", str(plots), "--quiet"]) == 0
    assert (plots / "riesz_scaling.dat").exists()


def test_config_error_exit_two(tmp_path, capsys):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("kind = pipeline\nscales = 8\ns = 0.7\nsigma = 0.5\n")
    assert main(["pipeline", "--config", str(cfg), "--quiet"]) == 2
    assert "error: s:" in capsys.readouterr().err


def test_config_wrong_verb(tmp_path):
    cfg = tmp_path / "r.cfg"
    cfg.write_text("kind = riesz\nscales = 6\n")
    assert main(["discrete", "--config", str(cfg), "--quiet"]) == 2


def test_fit_verb(tmp_path):
    data = tmp_path / "d.dat"
    data.write_text("# m value\n4 16\n6 64\n8 256\n")
    out = tmp_path / "fit.txt"
    assert main(["fit", str(data), "--out", str(out), "--quiet"]) == 0
    slope = float(out.read_text().split()[1])
    assert slope == pytest.approx(1.0)


def test_threads_flag_overrides_env(tmp_path, monkeypatch):
    monkeypatch.setenv("FANPROJ_THREADS", "0")  # invalid on its own
    out = tmp_path / "p.json"
    assert main(["pipeline", "--m", "8", "--E", "sqrtdelta", "--threads", "2", "--out", str(out), "--quiet"]) == 1
    assert json.loads(out.read_text())["mode"] == "witness"


def test_module_entry_point(tmp_path):
    r = subprocess.run(
        [sys.executable, "-m", "fanproj", "generate", "ap", "--m", "6", "--quiet"], capture_output=True, text=True
    )
    assert r.returncode == 0 and r.stdout.strip()
