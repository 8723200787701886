import csv
import json
import math

import pytest

from nlmaxwell.cli import ConfigError, main, parse_config, run

KERR = '[[nonlinearity.terms]]\ngamma = 1.0\np = 4.0\n'


def write(tmp_path, text, name="run.toml"):
    p = tmp_path / name
    p.write_text(text)
    return p


def read_csv(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def test_eigens_mode(tmp_path):
    cfg = write(tmp_path, 'mode = "eigens"\n[geometry]\nkind = "cube"\nn = 4\n[solver]\nK = 3\n[output]\nmatrices = true\n')
    out = tmp_path / "out"
    assert main(["solve", str(cfg), "--out", str(out)]) == 0
    rows = read_csv(out / "eigenvalues.csv")
    assert len(rows) == 3
    assert abs(float(rows[0]["lambda"]) - 2 * math.pi**2) / (2 * math.pi**2) < 0.05
    man = json.loads((out / "manifest.json").read_text())
    assert man["seed"] == 0 and "numpy" in man["versions"] and man["config"]["mode"] == "eigens"
    assert (out / "A.mtx").exists() and (out / "G.mtx").exists()


def test_invalid_exponent_is_rejected(tmp_path, capsys):
    cfg = write(tmp_path, 'mode = "ground_state_nehari"\n[[nonlinearity.terms]]\ngamma = 1.0\np = 7.0\n')
    assert run(cfg, tmp_path / "o") == 2
    err = capsys.readouterr().err
    assert "nonlinearity.terms[0].p" in err and "2 < p < 6" in err


@pytest.mark.parametrize(
    "raw,fragment",
    [
        ({"mode": "nope"}, "mode"),
        ({"mode": "eigens", "geometry": {"kind": "sphere"}}, "geometry.kind"),
        ({"mode": "eigens", "solver": {"tol": -1.0}}, "solver.tol"),
        ({"mode": "ground_state_nehari"}, "nonlinearity"),
        ({"mode": "tau_symmetric", "nonlinearity": {"terms": [{"p": 4.0}]}}, "cylinder"),
        ({"mode": "convergence_sweep", "sweep": {"levels": []}}, "sweep.levels"),
        ({"mode": "eigens", "mu": {"value": [1.0, -1.0, 1.0]}}, "mu"),
    ],
)
def test_config_validation_names_fields(raw, fragment):
    with pytest.raises(ConfigError, match=fragment.replace(".", r"\.").replace("[", r"\[")):
        parse_config(raw)


def test_unreadable_config(tmp_path):
    assert run(tmp_path / "missing.toml", tmp_path / "o") == 2
    assert run(write(tmp_path, "mode = [", "bad.toml"), tmp_path / "o") == 2


def test_hypothesis_check_mode(tmp_path):
    text = 'mode = "hypothesis_check"\n[[nonlinearity.terms]]\ngamma = [1.0, 1.0, 2.0]\np = 3.0\n[[nonlinearity.terms]]\ngamma = 0.5\np = 4.0\n[solver]\nsamples = 10000\n'
    out = tmp_path / "out"
    assert run(write(tmp_path, text), out) == 0
    rep = json.loads((out / "report.json").read_text())
    assert rep["violations"] == []
    for key in ("F2", "F3", "F5i", "F7", "F8"):
        assert rep["entries"][key]["min_slack"] >= -1e-12


def test_hypothesis_violation_exit_code(tmp_path):
    text = 'mode = "hypothesis_check"\n[nonlinearity]\ndelta = 0.3\n[[nonlinearity.terms]]\ngamma = 1.0\np = 4.0\n'
    out = tmp_path / "out"
    assert run(write(tmp_path, text), out) == 4
    assert "F7" in json.loads((out / "report.json").read_text())["violations"]


def test_ground_state_run_is_reproducible(tmp_path):
    text = 'mode = "ground_state_nehari"\n[geometry]\nkind = "cube"\nn = 2\n[solver]\nn_starts = 2\n' + KERR
    cfg = write(tmp_path, text)
    assert run(cfg, tmp_path / "a") == 0
    assert run(cfg, tmp_path / "b") == 0
    for name in ("eigenvalues.csv", "trace.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    rep = json.loads((tmp_path / "a" / "report.json").read_text())
    assert rep["energy"] > 0 and rep["residual"] <= 1e-7 and rep["norm_v"] > 0
    assert rep["helmholtz_orthogonality"] <= 1e-10
    assert "hypotheses" in rep and "int_F" in rep and "Q_v" in rep
    assert (tmp_path / "a" / "solution.vtk").read_text().startswith("# vtk DataFile")


def test_solver_failure_exit_code(tmp_path):
    text = 'mode = "ground_state_nehari"\n[geometry]\nkind = "cube"\nn = 2\n[solver]\nn_starts = 1\nmaxiter = 2\ntol = 1e-14\n' + KERR
    out = tmp_path / "out"
    assert run(write(tmp_path, text), out) == 3
    rep = json.loads((out / "report.json").read_text())
    assert rep["converged"] is False and rep["status"] == "max_iterations"


def test_eigenvalue_sweep(tmp_path):
    text = 'mode = "convergence_sweep"\n[geometry]\nkind = "cube"\n[sweep]\nquantity = "eigenvalue"\nlevels = [2, 4, 8]\nreference = 19.739208802178716\n'
    out = tmp_path / "out"
    assert run(write(tmp_path, text), out) == 0
    rows = read_csv(out / "sweep.csv")
    assert [int(r["n"]) for r in rows] == [2, 4, 8]
    errs = [float(r["error_vs_reference"]) for r in rows]
    assert errs[0] > errs[1] > errs[2]
    assert float(rows[-1]["error_vs_finest"]) == 0.0


def test_single_level_sweep(tmp_path):
    text = 'mode = "convergence_sweep"\n[geometry]\nkind = "cube"\n[sweep]\nlevels = [2]\n'
    out = tmp_path / "out"
    assert run(write(tmp_path, text), out) == 0
    assert len(read_csv(out / "sweep.csv")) == 1


def test_tau_symmetric_mode(tmp_path):
    text = (
        'mode = "tau_symmetric"\n[geometry]\nkind = "cylinder"\nn_radial = 2\nn_axial = 2\nn_angular = 12\n'
        "[symmetric]\nn_r = 2\nn_z = 2\n[solver]\nn_starts = 2\n" + KERR
    )
    out = tmp_path / "out"
    assert run(write(tmp_path, text), out) == 0
    assert read_csv(out / "meridian.csv")[0].keys() == {"r", "x3", "alpha"}
    rep = json.loads((out / "report.json").read_text())
    assert rep["energy"] > 0
    assert (out / "solution.vtk").exists()


def test_seed_override_is_recorded(tmp_path):
    cfg = write(tmp_path, 'mode = "eigens"\nseed = 3\n[geometry]\nkind = "cube"\nn = 1\n')
    out = tmp_path / "o"
    assert main(["solve", str(cfg), "--out", str(out), "--seed", "9", "--threads", "2"]) == 0
    man = json.loads((out / "manifest.json").read_text())
    assert man["seed"] == 9 and man["threads"] == 2
