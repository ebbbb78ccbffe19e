from __future__ import annotations

import csv
import json
import os
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from splitflow import cli

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def write_config(tmp_path, cfg, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(cfg, indent=2), encoding="utf-8")
    return path


def lorenz_cfg(experiment, seed=1, beta=1.0, **extra):
    return {"system": {"lorenz96": {"d": 4, "beta": beta, "h": 0.05}}, "experiment": experiment, "seed": seed, **extra}


def read_rows(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.reader(fh))


@pytest.mark.parametrize("name", ["lorenz_validate.json", "euler_validate.json"])
def test_validate_configs_pass(tmp_path, name):
    assert cli.main(["validate", "--config", str(CONFIGS / name), "--out", str(tmp_path)]) == 0
    rows = read_rows(tmp_path / "validate.csv")
    assert rows[0] == ["check", "value", "tolerance", "pass"]
    assert all(r[3] == "true" for r in rows[1:])


def test_manifest_echoes_config(tmp_path):
    cfg = lorenz_cfg({"simulate": {"steps": 20}}, seed=4)
    path = write_config(tmp_path, cfg)
    assert cli.main(["simulate", "--config", str(path), "--out", str(tmp_path)]) == 0
    manifest = json.loads((tmp_path / "run.json").read_text())
    assert manifest["config"] == cfg
    assert manifest["seed"] == 4 and manifest["subcommand"] == "simulate"
    assert manifest["version"].startswith("0.1.0+src.")
    assert manifest["wall_time_s"] >= 0
    # the echoed config runs again unchanged
    assert cli.parse_config(json.dumps(manifest["config"]), "simulate") == cfg
    rows = read_rows(tmp_path / "trajectory.csv")
    assert rows[0] == ["step", "H", "x1", "x2", "x3", "x4"] and len(rows) == 22


def test_seed_flag_overrides_config(tmp_path):
    path = write_config(tmp_path, lorenz_cfg({"simulate": {"steps": 5}}))
    assert cli.main(["simulate", "--config", str(path), "--out", str(tmp_path), "--seed", "99"]) == 0
    assert json.loads((tmp_path / "run.json").read_text())["seed"] == 99


def test_csv_uses_crlf_and_round_trip_floats(tmp_path):
    path = write_config(tmp_path, lorenz_cfg({"simulate": {"steps": 5, "x0": [0.1, 0.2, 0.3, 0.4]}}))
    cli.main(["simulate", "--config", str(path), "--out", str(tmp_path)])
    raw = (tmp_path / "trajectory.csv").read_bytes()
    assert raw.count(b"\r\n") == 7 and b"\n" not in raw.replace(b"\r\n", b"")
    first = read_rows(tmp_path / "trajectory.csv")[1]
    assert [float(v) for v in first[2:]] == [0.1, 0.2, 0.3, 0.4]


@pytest.mark.parametrize(
    "mutate, needle",
    [
        (lambda c: c["system"]["lorenz96"].update(d=3), "field system.lorenz96.d"),
        (lambda c: c["system"]["lorenz96"].update(speed=1), "speed"),
        (lambda c: c.pop("seed"), "'seed' is a required property"),
        (lambda c: c.update(seed=-1), "field seed"),
        (lambda c: c["experiment"]["simulate"].update(steps="ten"), "field experiment.simulate.steps"),
    ],
)
def test_bad_config_exits_2_with_diagnostics(tmp_path, capsys, mutate, needle):
    cfg = lorenz_cfg({"simulate": {"steps": 5}})
    mutate(cfg)
    path = write_config(tmp_path, cfg)
    assert cli.main(["simulate", "--config", str(path), "--out", str(tmp_path)]) == 2
    err = capsys.readouterr().err
    assert needle in err
    assert not (tmp_path / "run.json").exists()


def test_diagnostic_reports_line_number():
    text = '{\n  "system": {"lorenz96": {"d": 4, "beta": 1.0, "h": -1}},\n  "experiment": {"simulate": {"steps": 5}},\n  "seed": 1\n}'
    with pytest.raises(cli.ConfigError, match=r"line 2, field system.lorenz96.h"):
        cli.parse_config(text)


def test_malformed_json_reports_position():
    with pytest.raises(cli.ConfigError, match=r"line 3 column"):
        cli.parse_config('{\n "seed": 1,\n }')


def test_subcommand_must_match_experiment(tmp_path, capsys):
    path = write_config(tmp_path, lorenz_cfg({"simulate": {"steps": 5}}))
    assert cli.main(["drift", "--config", str(path), "--out", str(tmp_path)]) == 2
    assert "needs an experiment block 'drift'" in capsys.readouterr().err


def test_overflow_exits_3_with_trajectory_id(tmp_path, capsys):
    cfg = lorenz_cfg({"simulate": {"steps": 50, "x0": [0.0, 0.0, 0.0, 0.0]}}, beta=1e305)
    path = write_config(tmp_path, cfg)
    assert cli.main(["simulate", "--config", str(path), "--out", str(tmp_path)]) == 3
    assert "(trajectory id 0)" in capsys.readouterr().err


def test_failed_validate_exits_1(tmp_path, monkeypatch):
    monkeypatch.setattr(cli.lorenz96, "full_drift", lambda sys_, x: 2.0 * np.ones_like(x))
    path = write_config(tmp_path, lorenz_cfg({"validate": {"states": 5}}))
    assert cli.main(["validate", "--config", str(path), "--out", str(tmp_path)]) == 1


def test_thermalize_csv_columns(tmp_path):
    cfg = json.loads((CONFIGS / "thermalize.json").read_text())
    cfg["trials"] = 2000
    cfg["experiment"]["thermalize"]["deltas"] = [1e-2, 1e-3]
    path = write_config(tmp_path, cfg)
    assert cli.main(["thermalize", "--config", str(path), "--out", str(tmp_path)]) == 0
    rows = read_rows(tmp_path / "thermalize.csv")
    assert rows[0] == ["delta", "estimate", "ci", "estimate_times_logdelta"]
    for r in rows[1:]:
        delta, est = float(r[0]), float(r[1])
        assert float(r[3]) == pytest.approx(est * abs(np.log(delta)), rel=1e-15)


def test_portrait_conserves_invariants(tmp_path):
    assert cli.main(["triad-portrait", "--config", str(CONFIGS / "triad_portrait.json"), "--out", str(tmp_path)]) == 0
    data = np.array([[float(v) for v in r] for r in read_rows(tmp_path / "portrait.csv")[1:]])
    for orbit in np.unique(data[:, 0]):
        rows = data[data[:, 0] == orbit]
        for col in (5, 6):
            assert np.max(np.abs(rows[:, col] - rows[0, col])) <= 1e-10 * abs(rows[0, col])


def test_drift_csv(tmp_path):
    cfg = lorenz_cfg({"drift": {"radii": [1e3, 1e4], "n_steps": 5}}, trials=200)
    path = write_config(tmp_path, cfg)
    assert cli.main(["drift", "--config", str(path), "--out", str(tmp_path)]) == 0
    rows = read_rows(tmp_path / "drift.csv")
    assert rows[0] == ["H_x", "mean", "ci", "ratio", "trials", "overflows"]
    assert [float(r[0]) for r in rows[1:]] == pytest.approx([1e3, 1e4], rel=1e-12)


def _run_module(args, workers, cwd):
    env = {**os.environ, "SPLITFLOW_WORKERS": str(workers)}
    return subprocess.run([sys.executable, "-m", "splitflow", *args], env=env, cwd=cwd, capture_output=True, text=True)


def test_csv_bytes_independent_of_worker_count(tmp_path):
    cfg = lorenz_cfg({"drift": {"radii": [1e3, 1e4], "n_steps": 5}}, seed=12, trials=300)
    path = write_config(tmp_path, cfg)
    outs = []
    for workers in (1, 2):
        out = tmp_path / f"w{workers}"
        proc = _run_module(["drift", "--config", str(path), "--out", str(out)], workers, tmp_path)
        assert proc.returncode == 0, proc.stderr
        outs.append((out / "drift.csv").read_bytes())
    assert outs[0] == outs[1]
