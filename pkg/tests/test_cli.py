import csv
import json
import math
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from wegner2p.cli import config_hash, load_config, main, validate_config

CONFIGS = sorted(Path(__file__).resolve().parents[1].joinpath("configs").glob("*.json"))


def write(tmp_path, cfg, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(cfg))
    return str(p)


def outputs(out_dir, suffix):
    return sorted(Path(out_dir).glob(f"*{suffix}"))


def spectrum_cfg():
    return {
        "experiment": "spectrum",
        "master_seed": 0,
        "cube": {"center": [math.pi / 2], "half_width": math.pi / 2},
        "operator": {"spacing": math.pi / 256, "masses": [1.0]},
        "field": {"profile": {"kind": "tent", "range": 1.0},
                  "ensemble": {"kind": "iid_uniform", "bound": 0.0}},
        "spectrum": {"k": 10, "tol": 1e-10},
    }


def two_cfg(far=100.0):
    return {
        "experiment": "wegner-two",
        "master_seed": 4,
        "box": {"center1": [0], "center2": [0], "half_width1": 1, "half_width2": 1},
        "box_prime": {"center1": [far], "center2": [far], "half_width1": 1, "half_width2": 1},
        "operator": {"spacing": 0.25},
        "field": {"profile": {"kind": "tent", "range": 1.0},
                  "ensemble": {"kind": "iid_uniform", "bound": 1.0}},
        "wegner": {"interval": [1.0, 3.0], "epsilon": 0.1, "trials": 30},
    }


@pytest.mark.parametrize("path", CONFIGS, ids=lambda p: p.stem)
def test_shipped_configs_validate(path, capsys):
    assert main(["validate", "--config", str(path)]) == 0
    assert json.loads(capsys.readouterr().out) == {"issues": []}


def test_spectrum_matches_closed_form(tmp_path):
    out = tmp_path / "out"
    assert main(["run", "--config", write(tmp_path, spectrum_cfg()), "--out", str(out)]) == 0
    [path] = outputs(out, ".csv")
    assert path.name.startswith("spectrum_seed0_")
    rows = list(csv.DictReader(path.open()))
    vals = np.array([float(r["eigenvalue"]) for r in rows])
    h = math.pi / 256
    k = np.arange(1, 11)
    assert np.allclose(vals, (1 - np.cos(k * np.pi / 256)) / h ** 2, rtol=1e-9, atol=0)
    assert all(r["converged"] == "1" for r in rows)


def test_reruns_are_byte_identical(tmp_path):
    cfg = write(tmp_path, two_cfg())
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["run", "--config", cfg, "--out", str(a), "--threads", "1"]) == 0
    assert main(["run", "--config", cfg, "--out", str(b), "--threads", "3"]) == 0
    fa, fb = sorted(a.iterdir()), sorted(b.iterdir())
    assert [f.name for f in fa] == [f.name for f in fb] and len(fa) == 3
    for x, y in zip(fa, fb):
        assert x.read_bytes() == y.read_bytes()


def test_separation_verdict(tmp_path):
    out = tmp_path / "out"
    cfg = str(Path(__file__).resolve().parents[1] / "configs" / "separation_partial.json")
    assert main(["run", "--config", cfg, "--out", str(out)]) == 0
    [path] = outputs(out, ".json")
    res = json.loads(path.read_text())
    assert res["cases"] == ["C"] and res["kind"] == "partially_separated_only"
    assert res["distance"] > res["threshold"] == 16.0


def test_missing_config_exits_1(tmp_path, capsys):
    assert main(["run", "--config", str(tmp_path / "nope.json")]) == 1
    assert "error" in capsys.readouterr().err


def test_unknown_keys_exit_2(tmp_path, capsys):
    cfg = spectrum_cfg()
    cfg["colour"] = "blue"
    cfg["operator"]["stepsize"] = 0.1
    assert main(["validate", "--config", write(tmp_path, cfg)]) == 2
    issues = json.loads(capsys.readouterr().out)["issues"]
    text = " ".join(issues)
    assert "colour" in text and "stepsize" in text
    assert main(["run", "--config", write(tmp_path, cfg), "--out", str(tmp_path / "o")]) == 2
    assert not (tmp_path / "o").exists()


def test_epsilon_outside_unit_interval_is_flagged():
    cfg = two_cfg()
    cfg["wegner"]["epsilon"] = 1.5
    issues = validate_config(cfg)
    assert any("(0, 1)" in i for i in issues)


def test_close_boxes_are_flagged():
    issues = validate_config(two_cfg(far=10.0))
    assert any("sufficiently distant" in i for i in issues)
    assert any("16" in i for i in issues)


def test_overrides_and_hash(tmp_path):
    path = write(tmp_path, two_cfg())
    base = load_config(path)
    out = tmp_path / "o"
    assert main(["run", "--config", path, "--out", str(out), "--set", "wegner.trials=10",
                 "--seed", "9"]) == 0
    summary = json.loads(outputs(out, ".json")[0].read_text())
    assert summary["trials"] == 10 and summary["master_seed"] == 9
    # hash ignores scheduling and output location
    assert config_hash(base) == config_hash({**base, "threads": 8, "output_dir": "x"})
    assert config_hash(base) != config_hash({**base, "master_seed": 1})


def test_sweep_writes_plot_data(tmp_path):
    cfg = two_cfg()
    cfg["wegner"].pop("epsilon")
    cfg["wegner"]["epsilons"] = [0.2, 0.1]
    out = tmp_path / "o"
    assert main(["sweep", "--config", write(tmp_path, cfg), "--out", str(out)]) == 0
    [plot] = outputs(out, "_plot.dat")
    lines = plot.read_text().splitlines()
    assert [float(line.split()[0]) for line in lines] == [0.2, 0.1]
    summary = json.loads(outputs(out, ".json")[0].read_text())
    assert len(summary["rows"]) == 2 and "fitted_C" in summary


def test_console_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "wegner2p.cli", "validate", "--config",
                          write(tmp_path, spectrum_cfg())], capture_output=True, text=True)
    assert res.returncode == 0 and json.loads(res.stdout) == {"issues": []}


def test_covering_is_checked_on_every_box():
    cfg = two_cfg()
    cfg["box_prime"]["center1"] = [100.5]
    assert any("covering" in i for i in validate_config(cfg))
    dm = {
        "experiment": "dm-check",
        "box": {"center1": [0], "center2": [10], "half_width1": 2, "half_width2": 2},
        "operator": {"spacing": 0.25},
        "field": {"profile": {"kind": "tent", "range": 1.0, "scale": 0.5},
                  "ensemble": {"kind": "iid_uniform", "bound": 1.0}},
        "dm": {"t": 0.5, "realizations": 2},
    }
    assert any("covering" in i for i in validate_config(dm))
    dm["field"]["profile"]["scale"] = 1.0
    assert validate_config(dm) == []
