import csv
import json
import math
import re
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bsguided.cli import fmt, main
from bsguided.config import DEFAULTS, config_hash, load_config, parse_override, validate
from bsguided.errors import ConfigError

SMALL = ["--set", "grid.M=1", "--set", "grid.n_l=5"]
NUM = re.compile(r"^-?\d\.\d{16}e[+-]\d{2,3}$|^nan$|^-?inf$")


def _run(tmp_path, *args):
    code = main([*args, "--out", str(tmp_path)])
    rep = json.loads((tmp_path / "report.json").read_text(encoding="utf-8")) if (tmp_path / "report.json").exists() else None
    return code, rep


def _read_csv(path):
    with path.open(encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1], rows[2:]


# ---------------------------------------------------------------------------
# configuration


def test_defaults_validate():
    cfg = validate(load_config())
    assert cfg.E == 0.1 and cfg.grid.dim == 256 * 25
    assert cfg.E_delta == pytest.approx(0.125)


def test_yaml_file_and_overrides(tmp_path):
    p = tmp_path / "c.yaml"
    p.write_text("physics:\n  E: 0.05\ngrid:\n  N1: 128\n", encoding="utf-8")
    raw = load_config(str(p), ["grid.N1=64", "guided.k=[0.3, 0.1]"])
    assert raw["physics"]["E"] == 0.05 and raw["grid"]["N1"] == 64
    assert raw["guided"]["k"] == [0.3, 0.1]
    assert raw["physics"]["s"] == DEFAULTS["physics"]["s"]


@pytest.mark.parametrize(
    "overrides,match",
    [
        (["physics.E=0.2"], "E_delta = 0.125"),
        (["physics.E=0"], "E_delta"),
        (["physics.s=5"], "s0"),
        (["grid.N1=0"], "N1"),
        (["grid.N1=15"], "N1"),
        (["grid.n_l=3"], "n_l"),
        (["grid.M=20"], "memory guard"),
        (["grid.L=-1"], "L"),
        (["physics.g=-0.1"], "coupling"),
        (["physics.c=0"], "remainder"),
        (["numerics.rule=simpson"], "rule"),
        (["seed=-1"], "seed"),
        (["threads=0"], "threads"),
        (["trace.n_theta=2"], "n_theta"),
        (["potential.longitudinal=square"], "longitudinal"),
        (["physics.E=abc"], "number"),
    ],
)
def test_validation_errors(overrides, match):
    with pytest.raises(ConfigError, match=match):
        validate(load_config(None, overrides))


def test_bad_keys_and_files(tmp_path):
    with pytest.raises(ConfigError, match="unknown"):
        load_config(None, ["physics.EE=1"])
    with pytest.raises(ConfigError, match="section"):
        load_config(None, ["physics=1"])
    with pytest.raises(ConfigError, match="key=value"):
        parse_override("physics.E")
    with pytest.raises(ConfigError, match="not found"):
        load_config(str(tmp_path / "missing.yaml"))
    bad = tmp_path / "bad.yaml"
    bad.write_text("- 1\n- 2\n", encoding="utf-8")
    with pytest.raises(ConfigError, match="mapping"):
        load_config(str(bad))


def test_config_hash():
    a = load_config()
    b = load_config(None, ["physics.E=0.1"])
    c = load_config(None, ["physics.E=0.09"])
    assert config_hash(a) == config_hash(b)
    assert config_hash(a) != config_hash(c)
    assert re.fullmatch(r"[0-9a-f]{16}", config_hash(a))


@settings(max_examples=200, deadline=None)
@given(x=st.floats(allow_nan=True, allow_infinity=True))
def test_number_format_round_trips(x):
    s = fmt(x)
    assert NUM.match(s)
    y = float(s)
    assert (math.isnan(x) and math.isnan(y)) or y == x


# ---------------------------------------------------------------------------
# command line


def test_invalid_energy_exit_code(tmp_path, capsys):
    code = main(["trace", "--set", "physics.E=0.2", "--out", str(tmp_path)])
    assert code == 1
    assert "E_delta = 0.125" in capsys.readouterr().err


def test_unknown_key_exit_code(tmp_path):
    assert main(["scan", "--set", "nope=1", "--out", str(tmp_path)]) == 1


def test_regime_violation_exit_code(tmp_path):
    code, rep = _run(tmp_path, "trace", *SMALL, "--set", "physics.g=5.0")
    assert code == 2
    assert rep["error"]["type"] == "RegimeViolation"


def test_trace_four_nodes(tmp_path):
    code, rep = _run(tmp_path, "trace", *SMALL, "--set", "trace.n_theta=4", "--set", "trace.g_sweep=false")
    assert code == 0 and rep["passed"]
    assert rep["curve"]["n_nodes"] == 4 and rep["curve"]["winding_number"] == 1
    first, header, rows = _read_csv(tmp_path / "curve.csv")
    assert first == ["# bsguided trace", f"config_hash={rep['config_hash']}"]
    assert header == ["theta", "k2", "k3", "radius", "lambda1", "residual"]
    assert len(rows) == 4 and all(NUM.match(v) for r in rows for v in r)
    text = (tmp_path / "report.json").read_text(encoding="utf-8")
    data = json.loads(text)
    assert text == json.dumps(data, sort_keys=True, indent=2) + "\n"
    assert "seconds" not in text
    assert json.loads((tmp_path / "timing.json").read_text(encoding="utf-8"))["seconds"] > 0


def test_scan_sign_change_and_symmetry(tmp_path):
    code, rep = _run(tmp_path, "scan", *SMALL, "--set", "scan.n_theta=4", "--set", "scan.n_r=5")
    assert code == 0
    assert rep["scan"]["sign_changes_per_ray"] == [1, 1, 1, 1]
    _, header, rows = _read_csv(tmp_path / "scan.csv")
    assert header == ["k2", "k3", "lambda1", "g_lambda1_minus_1"]
    f = np.array([float(r[3]) for r in rows]).reshape(4, 5)
    # quarter turns map the rays onto each other
    for j in range(1, 4):
        np.testing.assert_allclose(f[j], f[0], rtol=0, atol=1e-8, equal_nan=True)


def test_guided_on_curve(tmp_path):
    code, rep = _run(tmp_path, "guided", *SMALL, "--set", "guided.theta=0.3")
    assert code == 0
    assert rep["guided"]["eigen_residual"] <= 1e-6
    assert rep["guided"]["null_residual"] <= 1e-6
    _, header, rows = _read_csv(tmp_path / "state.csv")
    assert header == ["x1", "x2", "x3", "re_u", "im_u"] and len(rows) == 256 * 25


def test_guided_off_curve(tmp_path):
    code, rep = _run(tmp_path, "guided", *SMALL, "--set", "guided.k=[0.3165, 0.0]")
    assert code == 2
    assert rep["error"]["type"] == "NotOnCurveError"
    assert rep["error"]["eigenvalue_distance"] > 1e-6
    assert not rep["passed"]


def test_guided_boundary(tmp_path):
    code, rep = _run(tmp_path, "guided", *SMALL, "--set", "guided.boundary=true", "--set", "potential.longitudinal=bump")
    assert code == 0
    bc = rep["boundary_case"]
    assert bc["applicable"] and bc["extrapolated"] > 0
    assert min(bc["min_singular_values"]) >= bc["extrapolated"]


def test_guided_bad_k(tmp_path):
    assert main(["guided", *SMALL, "--set", "guided.k=[1, 2, 3]", "--out", str(tmp_path)]) == 1


def test_module_entry_point(tmp_path):
    res = subprocess.run(
        [sys.executable, "-m", "bsguided", "trace", "--set", "physics.E=0.3", "--out", str(tmp_path)],
        capture_output=True, text=True, check=False,
    )  # fmt: skip
    assert res.returncode == 1 and "E_delta" in res.stderr
