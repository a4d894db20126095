import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from matscat.cli import EXIT_CONFIG, EXIT_IO, EXIT_NUMERIC, EXIT_OK, main, parse_config

import oracles as O

ZERO_DIRICHLET = {"problem": {"potential": {"kind": "zero", "n": 1}, "boundary": "dirichlet"},
                  "numerics": {"gamma": 3.0, "k_grid": {"start": 0.5, "stop": 4.0, "num": 8}}}
ROBIN = {"problem": {"potential": {"kind": "zero", "n": 1}, "boundary": {"U": [[[0.0, 1.0]]]}},
         "numerics": {"gamma": 5.0, "k_max": 3.0, "k_grid": {"start": 0.1, "stop": 5.0, "num": 20}}}


def write(tmp_path, cfg, name="job.json"):
    p = tmp_path / name
    p.write_text(json.dumps(cfg))
    return p


def run_cli(tmp_path, task, cfg, *flags, out="out"):
    code = main([task, "--config", str(write(tmp_path, cfg)), "--out", str(tmp_path / out), *flags])
    return code, tmp_path / out


def read_report(out):
    return json.loads((out / "report.json").read_text())


def test_forward_zero_dirichlet(tmp_path):
    code, out = run_cli(tmp_path, "forward", ZERO_DIRICHLET)
    assert code == EXIT_OK
    with open(out / "scattering.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 8
    assert all(float(r["S11_re"]) == -1.0 and float(r["S11_im"]) == 0.0 for r in rows)
    rep = read_report(out)
    assert rep["within_tol"] and rep["unitarity_defect"] < 1e-12


def test_extract_robin(tmp_path):
    code, out = run_cli(tmp_path, "extract", ROBIN)
    assert code == EXIT_OK
    data = json.loads((out / "scattering_data.json").read_text())
    (b,) = data["bound_states"]
    assert abs(b["kj"] - 1.0) < 1e-8
    assert abs(complex(*b["Cj2"][0][0]) - 2.0) < 1e-6


def test_bound_states_task(tmp_path):
    code, out = run_cli(tmp_path, "bound-states", ROBIN)
    assert code == EXIT_OK
    (kj,) = read_report(out)["kj"]
    assert abs(kj - 1.0) < 1e-8
    (rec,) = json.loads((out / "bound_states.json").read_text())["bound_states"]
    assert abs(complex(*rec["Cj2"][0][0]) - 2.0) < 1e-8


def test_reconstruct_from_data_file(tmp_path):
    # S = -1 (no reflection) plus one bound state at k = 1 with C^2 = 2
    ks = 0.25 + 0.5 * np.arange(100)
    data = {"S": [{"k": [k, 0.0], "matrix": [[[-1.0, 0.0]]]} for k in ks],
            "bound_states": [{"kj": 1.0, "Cj2": [[[2.0, 0.0]]]}]}
    (tmp_path / "data.json").write_text(json.dumps(data))
    cfg = {"problem": {"data": str(tmp_path / "data.json")},
           "numerics": {"marchenko": {"K": 50.0, "dk": 0.5, "h": 0.01, "x_max": 3.0}}}
    code, out = run_cli(tmp_path, "reconstruct", cfg)
    assert code == EXIT_OK
    xs, v = np.loadtxt(out / "vhat.csv", delimiter=",", skiprows=1, usecols=(0, 1), unpack=True)
    assert np.abs(v - O.degenerate_marchenko_potential(xs, 2.0, 1.0, 3.0)).max() < 1e-3


def test_flags_override_config(tmp_path):
    cfg = {**ZERO_DIRICHLET, "output": {"dir": str(tmp_path / "ignored")}}
    code, out = run_cli(tmp_path, "forward", cfg, "--tol", "1e-9", "--threads", "2")
    assert code == EXIT_OK and not (tmp_path / "ignored").exists()
    rep = read_report(out)
    assert rep["tol"] == 1e-9
    job = parse_config(cfg, "bound-states", {"k_max": 2.5, "tol": None})
    assert job.numerics["k_max"] == 2.5 and job.numerics["tol"] == 1e-6


def test_byte_identical_reruns(tmp_path):
    outs = [run_cli(tmp_path, "forward", ZERO_DIRICHLET, "--plot", out=f"run{i}") for i in range(2)]
    assert all(code == EXIT_OK for code, _ in outs)
    names = sorted(p.name for p in outs[0][1].iterdir())
    assert "abs_S.png" in names and names == sorted(p.name for p in outs[1][1].iterdir())
    for name in names:
        assert (outs[0][1] / name).read_bytes() == (outs[1][1] / name).read_bytes(), name


@pytest.mark.parametrize("cfg, task", [
    ({"problem": {"potential": {"kind": "nonsense"}}}, "forward"),
    ({"problem": {}}, "forward"),
    ({**ZERO_DIRICHLET, "numerics": {"gamma": -1.0}}, "forward"),
    (ZERO_DIRICHLET, "fullline"),
    ({**ZERO_DIRICHLET, "problem": {**ZERO_DIRICHLET["problem"], "boundary": "neumann"}}, "roundtrip"),
    ({**ROBIN, "numerics": {"marchenko": {"bogus": 1}}}, "roundtrip"),
])
def test_config_errors(tmp_path, cfg, task):
    code, _ = run_cli(tmp_path, task, cfg)
    assert code == EXIT_CONFIG


def test_invalid_json_and_unknown_task(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text("{not json")
    assert main(["forward", "--config", str(p)]) == EXIT_CONFIG
    assert main(["teleport", "--config", str(p)]) == EXIT_CONFIG


def test_missing_config_is_io_error(tmp_path):
    assert main(["forward", "--config", str(tmp_path / "nope.json")]) == EXIT_IO


def test_numeric_failure_names_stage(tmp_path, capsys):
    cfg = {"problem": {"potential": {"kind": "square_well", "n": 1, "params": {"v0": -1.0}},
                       "boundary": "dirichlet"},
           "numerics": {"gamma": 1.0, "k_grid": [[1.0, -2.0]]}}
    code, _ = run_cli(tmp_path, "forward", cfg)
    assert code == EXIT_NUMERIC
    assert "stage 'scattering'" in capsys.readouterr().err


def test_weyl_on_unsupported_potential(tmp_path):
    cfg = {"problem": {"potential": {"kind": "sech2", "n": 1, "params": {"kappa": 1.0}}, "line": "full"},
           "numerics": {"gamma": 0.5}}
    code, _ = run_cli(tmp_path, "weyl", cfg)
    assert code == EXIT_CONFIG


def test_module_entry_point(tmp_path):
    cfg = write(tmp_path, ZERO_DIRICHLET)
    proc = subprocess.run([sys.executable, "-m", "matscat", "forward", "--config", str(cfg),
                           "--out", str(tmp_path / "sub")], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert (tmp_path / "sub" / "report.json").exists()
