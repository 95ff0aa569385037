from __future__ import annotations

import csv
import io
import json
import subprocess
import sys

import pytest

from diskcurv.cli import EXIT_CONFIG, EXIT_NUMERICAL, EXIT_OK, main, run
from diskcurv.config import ConfigError, ExperimentConfig, build_model, parse_grid, validate
from diskcurv.spectral import GridSpec

SMALL = [64, 32]


def write_config(tmp_path, doc, name="config.json"):
    path = tmp_path / name
    path.write_text(json.dumps(doc), encoding="utf-8")
    return path


def read_json(path):
    return json.loads(path.read_text(encoding="utf-8"))


def test_criteria_nonexistence_example(tmp_path):
    cfg = write_config(tmp_path, {"command": "criteria", "model": {"K": "-1", "h": "3 + x1"}})
    out = tmp_path / "out"
    assert main(["--config", str(cfg), "--output", str(out), "--quiet"]) == EXIT_OK
    rep = read_json(out / "report.json")
    assert rep["hypotheses"]["verdict"] == "neither b− nor b+"
    assert rep["status"] == "ok" and rep["command"] == "criteria"
    rows = list(csv.reader(io.StringIO((out / "phi_profile.csv").read_text())))
    assert rows[0] == ["theta", "phi", "dtau_phi", "dnu_phi", "dee"]
    assert len(rows) == 1 + GridSpec().n_theta


def test_solve_example(tmp_path):
    cfg = write_config(tmp_path, {"command": "solve", "model": {"K": "-1", "h": "2"},
                                  "solver": {"eps": 0.0, "grid": SMALL, "gauge": "barycenter"}})
    out = tmp_path / "out"
    assert main(["--config", str(cfg), "--output", str(out), "--quiet"]) == EXIT_OK
    rep = read_json(out / "report.json")
    assert rep["solve"]["converged"] is True
    assert rep["solve"]["identity_residuals"]["gauss_bonnet"] < 1e-8
    res = list(csv.DictReader(io.StringIO((out / "residuals.csv").read_text())))
    assert {r["residual_name"] for r in res} >= {"gauss_bonnet", "kazdan_warner", "pohozaev_rotation"}
    assert (out / "history.csv").read_text().startswith("iteration,residual,step_length\n")


def test_solve_nonexistence_exits_2(tmp_path):
    cfg = write_config(tmp_path, {"command": "solve", "model": {"K": "-1", "h": "0.5"},
                                  "solver": {"grid": SMALL}})
    out = tmp_path / "out"
    assert main(["--config", str(cfg), "--output", str(out), "--quiet"]) == EXIT_NUMERICAL
    rep = read_json(out / "report.json")
    assert rep["reason"] == "diverged" and rep["status"] == "failed"
    assert "blowup_watch" in rep
    assert read_json(out / "manifest.json")["exit_status"] == EXIT_NUMERICAL


def test_validate_findings():
    def codes(doc):
        return {f.code for f in validate(doc) if f.severity == "error"}

    assert "invalid perturbation" in codes({"command": "solve", "model": {"K": "-1", "h": "2"},
                                            "solver": {"eps": -1}})
    assert "hypothesis-H" in codes({"command": "solve", "model": {"K": "+1", "h": "2", "assert_H": True}})
    assert "hypothesis-H" not in codes({"command": "solve", "model": {"K": "+1", "h": "2"}})
    assert "missing-block" in codes({"command": "degree", "model": {"K": "-0.5", "h": "2"}})
    assert "missing-block" in codes({"command": "solve"})
    assert not codes({"command": "bubbles"})
    warn = [f for f in validate({"command": "bubbles", "colour": 1}) if f.severity == "warning"]
    assert warn and warn[0].code == "unknown-key"


def test_validate_flag(tmp_path, capsys):
    cfg = write_config(tmp_path, {"command": "solve", "model": {"K": "-1", "h": "2"}, "solver": {"eps": -1}})
    assert main(["--config", str(cfg), "--validate"]) == EXIT_CONFIG
    findings = json.loads(capsys.readouterr().out)
    assert findings[0]["code"] == "invalid perturbation"


def test_config_error_paths(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json", encoding="utf-8")
    out = tmp_path / "out1"
    assert main(["--config", str(bad), "--output", str(out), "--quiet"]) == EXIT_CONFIG
    man = read_json(out / "manifest.json")
    assert man["exit_status"] == EXIT_CONFIG and man["reason"].startswith("config error")
    cfg = write_config(tmp_path, {"command": "solve", "model": {"K": "-1", "h": "2"},
                                  "solver": {"eps": -2}})
    out = tmp_path / "out2"
    assert main(["--config", str(cfg), "--output", str(out), "--quiet"]) == EXIT_CONFIG
    assert read_json(out / "manifest.json")["exit_status"] == EXIT_CONFIG
    assert read_json(out / "report.json")["status"] == "failed"


def test_manifest_contents(tmp_path):
    status, man = run({"command": "bubbles", "params": {"hh": [2.0], "lam": [0.0]}}, tmp_path)
    assert status == EXIT_OK
    assert set(man) >= {"config", "grid", "versions", "wall_time_s", "exit_status", "reason", "artifacts"}
    assert man["artifacts"] == ["report.json", "bubbles.csv"]
    assert read_json(tmp_path / "manifest.json")["versions"]["numpy"]


def _outputs(path):
    files = {}
    for f in sorted(path.iterdir()):
        text = f.read_bytes()
        if f.name == "manifest.json":
            doc = json.loads(text)
            doc.pop("wall_time_s")
            text = json.dumps(doc, sort_keys=True).encode()
        files[f.name] = text
    return files


def test_byte_identical_reruns(tmp_path):
    doc = {"command": "diagnose", "model": {"K": "-1", "h": "3 + x1"}, "solver": {"eps": 0.1},
           "params": {"a": [0.9, 0.0], "noise": 0.01}, "seed": 7}
    run(doc, tmp_path / "a")
    run(doc, tmp_path / "b")
    a, b = _outputs(tmp_path / "a"), _outputs(tmp_path / "b")
    assert a == b
    rep = json.loads(a["report.json"])
    assert rep["localization"]["verdict"] == "consistent"
    doc2 = dict(doc, seed=8)
    run(doc2, tmp_path / "c")
    assert _outputs(tmp_path / "c")["report.json"] != a["report.json"]


def test_bubbles_command(tmp_path):
    status, _ = run({"command": "bubbles", "params": {"hh": [1.5, 2.0], "lam": [0.0, 0.5]}}, tmp_path)
    assert status == EXIT_OK
    rows = list(csv.DictReader(io.StringIO((tmp_path / "bubbles.csv").read_text())))
    assert len(rows) == 4
    for r in rows:
        assert float(r["boundary_mass"]) == pytest.approx(float(r["boundary_mass_closed"]), rel=1e-8)
        assert float(r["J_hh"]) == pytest.approx(float(r["J_hh_closed"]), abs=1e-6)


def test_continue_landscape_degree_commands(tmp_path):
    status, _ = run({"command": "continue", "model": {"K": "-1", "h": "2"},
                     "solver": {"grid": SMALL, "gauge": "barycenter", "schedule": [0.1, 0.05, 0.0]}},
                    tmp_path / "c")
    assert status == EXIT_OK
    assert (tmp_path / "c" / "trace.csv").read_text().count("\n") == 4
    status, _ = run({"command": "landscape", "model": {"K": "-0.5", "h": "2"},
                     "linking": {"sigma": 0.2, "n_samples": 7}}, tmp_path / "l")
    assert status == EXIT_OK
    header = (tmp_path / "l" / "path_profile.csv").read_text().splitlines()[0]
    assert header == "tau,segment,energy,J_h,B_eps_h,A,B1,B2"
    status, _ = run({"command": "degree", "model": {"K": "-0.5", "h": "2"},
                     "linking": {"sigma": 0.01, "refinement": 2}}, tmp_path / "d")
    assert status == EXIT_OK
    deg = read_json(tmp_path / "d" / "degree.json")
    assert deg["degree"] == 1 and set(deg) == {"degree", "min_chi_norm", "min_homotopy_norm", "refinement"}


def test_overrides_from_flags(tmp_path):
    cfg = write_config(tmp_path, {"command": "solve", "model": {"K": "-1", "h": "2"},
                                  "solver": {"gauge": "barycenter"}})
    out = tmp_path / "out"
    assert main(["--config", str(cfg), "--output", str(out), "--grid", "32,16", "--eps", "0.05",
                 "--quiet"]) == EXIT_OK
    man = read_json(out / "manifest.json")
    assert man["grid"]["n_theta"] == 32 and man["config"]["solver"]["eps"] == 0.05


def test_module_entry_point(tmp_path):
    cfg = write_config(tmp_path, {"command": "bubbles", "params": {"hh": [2.0], "lam": [0.0]}})
    proc = subprocess.run([sys.executable, "-m", "diskcurv.cli", "--config", str(cfg), "--output",
                           str(tmp_path / "o")], capture_output=True, text=True, check=False)
    assert proc.returncode == 0
    assert "bubbles: exit 0" in proc.stdout


def test_config_helpers():
    assert parse_grid("32,16") == GridSpec(32, 16)
    assert parse_grid([32, 16]) == GridSpec(32, 16)
    with pytest.raises(ConfigError):
        parse_grid("32")
    g = GridSpec(32, 16)
    m1 = build_model({"K": "-1", "h": "2 + 0.1*x1"}, g)
    m2 = build_model({"K": {"values": m1.K.values.tolist(), "grid": [32, 16]},
                      "h": {"values": list(m1.h.values)}}, g)
    assert (m1.K.values == m2.K.values).all()
    assert abs(m1.h.values - m2.h.values).max() < 1e-14
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"command": "launch"})
