import io
import json
import os
import subprocess
import sys

import pytest

from selfrep.cli import (EXIT_CONFIG, EXIT_FAIL, EXIT_NUMERIC, EXIT_OK, ConfigError,
                         resolve_config, run)


def _run(argv):
    buf = io.StringIO()
    code = run(argv, stdout=buf)
    return code, buf.getvalue()


def _read(path, name):
    with open(os.path.join(path, name)) as fh:
        return fh.read()


def test_missing_seed_names_the_key(tmp_path, capsys):
    code, _ = _run(["verify-rk", "--out", str(tmp_path)])
    assert code == EXIT_CONFIG
    assert "'seed'" in capsys.readouterr().err


def test_unknown_flag_and_key(tmp_path):
    assert _run(["verify-rk", "--seed", "1", "--bogus", "2"])[0] == EXIT_CONFIG
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"seed": 1, "bogus": 2}))
    assert _run(["verify-rk", "--config", str(cfg), "--out", str(tmp_path)])[0] == EXIT_CONFIG


@pytest.mark.parametrize("key,value", [("replicas", "10"), ("alpha", "1.5"), ("level", "-1"),
                                       ("seed", "x"), ("a", "0")])
def test_invalid_values_are_rejected(key, value):
    with pytest.raises(ConfigError) as err:
        resolve_config("verify-rk", {"seed": 1}, {key: value})
    assert repr(key) in str(err.value)


def test_flags_override_config_file(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"seed": 1, "replicas": 70, "level": 3}))
    out = tmp_path / "run"
    code, _ = _run(["verify-rk", "--config", str(cfg), "--replicas", "60", "--out", str(out)])
    assert code in (EXIT_OK, EXIT_FAIL)
    echo = json.loads(_read(out, "config.json"))
    assert echo["replicas"] == 60 and echo["level"] == 3 and echo["seed"] == 1
    assert "threads" not in echo


def test_report_is_byte_identical_across_runs(tmp_path):
    args = ["verify-rk", "--seed", "5", "--replicas", "60", "--level", "4"]
    _run(args + ["--out", str(tmp_path / "a")])
    _run(args + ["--out", str(tmp_path / "b"), "--threads", "2"])
    assert _read(tmp_path / "a", "report.json") == _read(tmp_path / "b", "report.json")
    assert os.path.exists(tmp_path / "a" / "samples_lhs.csv")
    meta = json.loads(_read(tmp_path / "a", "meta.json"))
    assert meta["backend"] in ("numba", "python")


def test_outdir_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("SELFREP_OUTDIR", str(tmp_path / "env"))
    code, _ = _run(["simulate-discrete", "--seed", "1", "--level", "3"])
    assert code == EXIT_OK
    assert os.path.exists(tmp_path / "env" / "events.csv")


def test_simulations_write_outputs(tmp_path):
    code, text = _run(["simulate-diffusion", "--seed", "2", "--u-horizon", "1", "--du", "1e-3",
                       "--out", str(tmp_path / "d")])
    assert code in (EXIT_OK, EXIT_NUMERIC)
    assert "x_end=" in text
    assert _read(tmp_path / "d", "trajectory.csv").startswith("t,x\n")
    code, _ = _run(["simulate-flow", "--seed", "2", "--u-horizon", "0.2", "--du", "1e-3",
                    "--half-width", "2", "--rec-stride", "20", "--dump-flow", "true",
                    "--out", str(tmp_path / "f")])
    assert code == EXIT_OK
    rows = _read(tmp_path / "f", "flow_psi.csv").splitlines()
    assert len(rows) == 1 + 11 and rows[0].startswith("u,")


def test_profile_table_config(tmp_path):
    cfg = tmp_path / "c.json"
    prof = {"kind": "table", "x_left": -2.0, "spacing": 0.5,
            "values": [1.0, 1.0, 2.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0]}
    cfg.write_text(json.dumps({"seed": 3, "profile": prof, "level": 3}))
    code, _ = _run(["simulate-discrete", "--config", str(cfg), "--out", str(tmp_path / "o")])
    assert code == EXIT_OK
    bad = dict(prof, kind="spline")
    cfg.write_text(json.dumps({"seed": 3, "profile": bad}))
    assert _run(["simulate-discrete", "--config", str(cfg)])[0] == EXIT_CONFIG


def test_grid_exhaustion_is_a_numerical_failure(tmp_path):
    code, _ = _run(["simulate-flow", "--seed", "1", "--u-horizon", "50", "--du", "1e-2",
                    "--half-width", "0.05", "--out", str(tmp_path)])
    assert code == EXIT_NUMERIC


def test_selftest_entry_point(tmp_path):
    env = dict(os.environ, SELFREP_OUTDIR=str(tmp_path))
    res = subprocess.run([sys.executable, "-m", "selfrep.cli", "selftest"], env=env,
                         capture_output=True, text=True, timeout=600)
    assert res.returncode == 0, res.stdout + res.stderr
    assert "FAIL" not in res.stdout
