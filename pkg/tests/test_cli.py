import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest
import yaml

from nlwlab.cli import main
from nlwlab.config import build_model, parse_config
from nlwlab.errors import ConfigurationError


def _write(tmp_path, data, name="c.yaml"):
    p = tmp_path / name
    p.write_text(yaml.safe_dump(data))
    return p


SIM = {"sim": {"t_final": 1.0, "dt": 0.05}, "simulate": {"ensemble": 20, "chunk": 7, "stride": 5}}


# --- config ------------------------------------------------------------------

def test_defaults_are_valid():
    cfg = parse_config({})
    m = build_model(cfg)
    assert m.domain.n_modes == 8 and m.nl.kind == "sine_gordon"


@pytest.mark.parametrize("data,needle", [
    ({"norm": {"s": 0.7}}, "s < 1 - rho/2"),
    ({"nonlinearity": {"nu": 1.0}}, "nu"),
    ({"norm": {"alpha": 0.4}}, "contract"),
    ({"sim": {"dt": 5.0}}, "stability"),
    ({"sim": {"t_final": 1.01}}, "multiple of dt"),
    ({"unknown": 1}, "Extra inputs"),
    ({"kind": "couple", "noise": {"b": [1, 0, 1, 1, 1, 1, 1, 1]}}, "b_j > 0"),
    ({"kind": "verify", "verify": {"kappa": 100.0}}, "kappa"),
    ({"kind": "pressure", "pressure": {"beta": [0.0, 1.0], "delta": 0.5}}, "oscillation budget"),
    ({"domain": {"n_modes": 4}, "sim": {"h": [1.0]}}, "sim.h"),
    ({"nonlinearity": {"C": 0.01}}, "sweep"),
])
def test_config_rules(data, needle):
    with pytest.raises(ConfigurationError) as exc:
        parse_config(data)
    assert any(needle in v for v in exc.value.violations), exc.value.violations


def test_all_violations_are_collected():
    with pytest.raises(ConfigurationError) as exc:
        parse_config({"norm": {"s": 0.7}, "nonlinearity": {"nu": 1.0}, "sim": {"h": [1.0]}})
    assert len(exc.value.violations) >= 3


def test_config_hash_is_canonical():
    a = parse_config({"seed": 3, "sim": {"dt": 0.05}})
    b = parse_config("sim:\n  dt: 0.05\nseed: 3\n")
    assert a.digest() == b.digest()
    assert a.digest() != parse_config({"seed": 4}).digest()


# --- CLI -----------------------------------------------------------------------

def test_simulate_writes_manifest_and_csv(tmp_path, capsys):
    cfg = _write(tmp_path, SIM)
    out = tmp_path / "out"
    assert main(["simulate", "--config", str(cfg), "--seed", "3", "--out", str(out)]) == 0
    man = json.loads((out / "manifest.json").read_text())
    assert man["seed"] == 3 and man["passed"] is True
    assert set(man["outputs"]) == {"timeseries.csv", "final_states.csv"}
    rows = np.loadtxt(out / "timeseries.csv", delimiter=",", skiprows=1)
    assert rows.shape == (4, 7) and rows[0, 0] == pytest.approx(0.25)
    assert "PASS" in capsys.readouterr().out


def test_same_config_and_seed_reproduce_bytes(tmp_path):
    cfg = _write(tmp_path, SIM)
    outs = []
    for i, workers in enumerate(["1", "3"]):
        out = tmp_path / f"o{i}"
        assert main(["simulate", "--config", str(cfg), "--seed", "9", "--out", str(out), "--workers", workers]) == 0
        outs.append(out)
    for name in ("timeseries.csv", "final_states.csv"):
        assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes()
    m0, m1 = (json.loads((o / "manifest.json").read_text()) for o in outs)
    assert m0["numeric_hash"] == m1["numeric_hash"]
    other = tmp_path / "o2"
    main(["simulate", "--config", str(cfg), "--seed", "10", "--out", str(other)])
    assert json.loads((other / "manifest.json").read_text())["numeric_hash"] != m0["numeric_hash"]


def test_zero_horizon_gives_empty_series(tmp_path):
    cfg = _write(tmp_path, {"sim": {"t_final": 0.0}})
    out = tmp_path / "out"
    assert main(["simulate", "--config", str(cfg), "--out", str(out)]) == 0
    lines = (out / "timeseries.csv").read_text().splitlines()
    assert len(lines) == 1 and lines[0].startswith("t,")
    assert (out / "manifest.json").exists()


@pytest.mark.parametrize("data", [{"norm": {"s": 0.9}}, {"kind": "ldp"}, {"simulate": {"bogus": 1}}])
def test_config_error_exits_2_without_outputs(tmp_path, data):
    cfg = _write(tmp_path, data)
    out = tmp_path / "out"
    assert main(["simulate", "--config", str(cfg), "--out", str(out)]) == 2
    assert not out.exists()


def test_bad_seed_and_missing_file_exit_2(tmp_path):
    out = tmp_path / "out"
    assert main(["simulate", "--seed", str(2**64), "--out", str(out)]) == 2
    assert main(["simulate", "--seed", "-1", "--out", str(out)]) == 2
    assert main(["simulate", "--config", str(tmp_path / "nope.yaml"), "--out", str(out)]) == 2
    assert main(["simulate", "--workers", "0", "--out", str(out)]) == 2
    assert not out.exists()


def test_failed_check_exits_1(tmp_path):
    # a one-unit burn-in is far too short for two initial conditions to agree
    data = {"domain": {"n_modes": 2}, "sim": {"dt": 0.1},
            "pressure": {"t": 4.0, "t_burn": 1.0, "ensemble": 400, "delta": 2.0, "n_beta": 11,
                         "second_initial": {"u": [1.5, 0.0]}}}
    cfg = _write(tmp_path, data)
    out = tmp_path / "out"
    assert main(["pressure", "--config", str(cfg), "--seed", "3", "--out", str(out)]) == 1
    man = json.loads((out / "manifest.json").read_text())
    assert man["passed"] is False and man["summary"]["ic_max_z"] > 3


@pytest.mark.parametrize("kind,data", [
    ("couple", {"couple": {"pairs": 10, "t_final": 2.0, "levels": [0, 4]}}),
    ("eigen", {"domain": {"n_modes": 4}, "sim": {"dt": 0.1}, "eigen": {"ensemble": 300, "T": 4.0, "burn_in": 1.0}}),
    ("verify", {"domain": {"n_modes": 4}, "sim": {"dt": 0.1},
                "verify": {"ensemble": 100, "horizon": 4.0, "n_times": 9}}),
    ("ldp", {"domain": {"n_modes": 2}, "sim": {"dt": 0.1},
             "ldp": {"pressure": {"t": 4.0, "t_burn": 1.0, "ensemble": 200, "delta": 2.0},
                     "tails": {"t_grid": [1.0, 2.0, 3.0], "ensemble": 500, "intervals": [[0.1, 0.5]]}}}),
])
def test_every_kind_writes_outputs(tmp_path, kind, data):
    cfg = _write(tmp_path, data)
    out = tmp_path / "out"
    code = main([kind, "--config", str(cfg), "--seed", "1", "--out", str(out)])
    assert code in (0, 1)
    man = json.loads((out / "manifest.json").read_text())
    assert man["kind"] == kind and man["outputs"]
    for name in man["outputs"]:
        assert (out / name).exists()


def test_console_script_entry_point(tmp_path):
    out = tmp_path / "out"
    r = subprocess.run([sys.executable, "-m", "nlwlab.cli", "simulate", "--out", str(out)], capture_output=True,
                       text=True)
    assert r.returncode == 0, r.stderr
    assert Path(out / "manifest.json").exists()


@pytest.mark.parametrize("path", sorted((Path(__file__).parent.parent / "configs").glob("*.yaml")),
                         ids=lambda p: p.stem)
def test_shipped_configs_validate(path):
    cfg = parse_config(path)
    assert cfg.kind == path.stem
