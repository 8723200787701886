"""Configuration-driven runs: ``nlmaxwell solve <config.toml>``.

A run reads one TOML file, executes one solver mode and writes its artifacts
to an output directory.  Exit codes: 0 success, 2 configuration error,
3 solver non-convergence, 4 hypothesis violations (the report is still
written).

Example configuration::

    mode = "ground_state_nehari"
    seed = 0

    [geometry]
    kind = "cube"        # or "cylinder"
    n = 2

    [mu]
    value = 1.0          # scalar, diagonal [a, a, b] or a 3x3 matrix

    [V]
    value = 1.0

    [[nonlinearity.terms]]
    gamma = 1.0
    p = 4.0

    [solver]
    tol = 1e-7
    n_starts = 10
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import platform
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import __version__
from .critical import (
    ConvergenceError,
    FieldProblem,
    NehariError,
    NonConcavityError,
    far_point,
    ground_state,
    mountain_pass_cM,
    write_trace_csv,
)
from .fem import CoefficientField, MaxwellOperators, vertex_average, write_matrix_market
from .mesh import build_cube_mesh, build_cylinder_mesh, write_vtk
from .nonlinearity import GammaField, NonlinearityModel, PowerTerm, check_hypotheses
from .spectrum import EigenSolverError, InsufficientSpectrumError, SaddlePointError, maxwell_eigenpairs, spectral_split, write_eigen_csv

MODES = (
    "eigens",
    "ground_state_nehari",
    "ground_state_mp",
    "tau_symmetric",
    "betagamma_symmetric",
    "hypothesis_check",
    "convergence_sweep",
)
EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_HYPOTHESIS = 0, 2, 3, 4


class ConfigError(ValueError):
    """Invalid configuration; the message starts with the offending field path."""


@dataclass
class RunConfig:
    mode: str
    geometry: dict
    mu: CoefficientField
    V: CoefficientField
    model: NonlinearityModel | None
    solver: dict
    seed: int = 0
    threads: int = 1
    sweep: dict = field(default_factory=dict)
    symmetric: dict = field(default_factory=dict)
    output: dict = field(default_factory=dict)
    raw: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------------------
# parsing


def _matrix(value, path) -> np.ndarray:
    try:
        a = np.array(value, dtype=float)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: expected a number, a 3-vector or a 3x3 matrix") from exc
    if a.ndim == 0:
        return a * np.eye(3)
    if a.shape == (3,):
        return np.diag(a)
    if a.shape == (3, 3):
        return a
    raise ConfigError(f"{path}: expected a number, a 3-vector or a 3x3 matrix, got shape {a.shape}")


def _coefficient(spec, path) -> CoefficientField:
    if spec is None:
        return CoefficientField.identity()
    if not isinstance(spec, dict):
        spec = {"value": spec}
    try:
        if "regions" in spec:
            regions = []
            for i, r in enumerate(spec["regions"]):
                regions.append((r["lo"], r["hi"], _matrix(r["value"], f"{path}.regions[{i}].value")))
            return CoefficientField.piecewise(regions, _matrix(spec.get("default", 1.0), f"{path}.default"))
        return CoefficientField.constant(_matrix(spec.get("value", 1.0), f"{path}.value"))
    except KeyError as exc:
        raise ConfigError(f"{path}: missing key {exc.args[0]!r}") from exc
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"{path}: {exc}") from exc


def _gamma(spec, path) -> GammaField:
    if isinstance(spec, dict) and "regions" in spec:
        regions = [(r["lo"], r["hi"], _matrix(r["value"], f"{path}.regions[{i}].value")) for i, r in enumerate(spec["regions"])]
        return GammaField.piecewise(regions, _matrix(spec.get("default", 1.0), f"{path}.default"))
    return GammaField.constant(_matrix(spec, path))


def _model(spec) -> NonlinearityModel:
    terms = spec.get("terms")
    if not terms:
        raise ConfigError("nonlinearity.terms: at least one power term is required")
    out = []
    for i, t in enumerate(terms):
        path = f"nonlinearity.terms[{i}]"
        if "p" not in t:
            raise ConfigError(f"{path}.p: missing exponent")
        p = float(t["p"])
        if not 2.0 < p < 6.0:
            raise ConfigError(f"{path}.p: exponent must satisfy 2 < p < 6, got {p:g}")
        try:
            out.append(PowerTerm(_gamma(t.get("gamma", 1.0), f"{path}.gamma"), p))
        except ValueError as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"{path}.gamma: {exc}") from exc
    delta = float(spec.get("delta", 0.0))
    if delta < 0:
        raise ConfigError(f"nonlinearity.delta: must be >= 0, got {delta:g}")
    return NonlinearityModel(out, delta, spec.get("name", ""))


def _positive(d, key, path, kind=float):
    if key in d:
        v = kind(d[key])
        if not v > 0:
            raise ConfigError(f"{path}.{key}: must be positive, got {v}")


def parse_config(raw: dict, seed: int | None = None, threads: int | None = None) -> RunConfig:
    mode = raw.get("mode")
    if mode not in MODES:
        raise ConfigError(f"mode: expected one of {', '.join(MODES)}, got {mode!r}")
    geom = dict(raw.get("geometry", {"kind": "cube", "n": 2}))
    kind = geom.get("kind", "cube")
    if kind not in ("cube", "cylinder"):
        raise ConfigError(f"geometry.kind: expected 'cube' or 'cylinder', got {kind!r}")
    geom["kind"] = kind
    if kind == "cube":
        _positive(geom, "n", "geometry", int)
    else:
        for key in ("n_radial", "n_axial", "n_angular"):
            _positive(geom, key, "geometry", int)
        for key in ("radius", "height"):
            _positive(geom, key, "geometry")
    if mode in ("tau_symmetric", "betagamma_symmetric") and kind != "cylinder":
        raise ConfigError(f"geometry.kind: mode {mode} needs a cylinder")
    solver = dict(raw.get("solver", {}))
    for key in ("tol", "tol_eig", "near_one_tol"):
        _positive(solver, key, "solver")
    for key in ("K", "n_starts", "maxiter", "n_nodes", "samples"):
        _positive(solver, key, "solver", int)
    needs_model = mode not in ("eigens",) and not (mode == "convergence_sweep" and raw.get("sweep", {}).get("quantity", "eigenvalue") == "eigenvalue")
    model = None
    if "nonlinearity" in raw:
        model = _model(raw["nonlinearity"])
    elif needs_model:
        raise ConfigError(f"nonlinearity: required for mode {mode}")
    sweep = dict(raw.get("sweep", {}))
    if mode == "convergence_sweep":
        levels = sweep.get("levels")
        if not levels or not all(isinstance(v, int) and v > 0 for v in levels):
            raise ConfigError("sweep.levels: expected a non-empty list of positive integers")
        if sweep.get("quantity", "eigenvalue") not in ("eigenvalue", "energy"):
            raise ConfigError("sweep.quantity: expected 'eigenvalue' or 'energy'")
        if kind != "cube":
            raise ConfigError("geometry.kind: convergence sweeps refine cube meshes")
    return RunConfig(
        mode=mode,
        geometry=geom,
        mu=_coefficient(raw.get("mu"), "mu"),
        V=_coefficient(raw.get("V"), "V"),
        model=model,
        solver=solver,
        seed=int(raw.get("seed", 0) if seed is None else seed),
        threads=int(raw.get("threads", 1) if threads is None else threads),
        sweep=sweep,
        symmetric=dict(raw.get("symmetric", {})),
        output=dict(raw.get("output", {})),
        raw=raw,
    )


def load_config(path, seed=None, threads=None) -> RunConfig:
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except OSError as exc:
        raise ConfigError(f"config: cannot read {path}: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"config: invalid TOML: {exc}") from exc
    return parse_config(raw, seed, threads)


# ---------------------------------------------------------------------------------------
# runners


def _mesh(geom: dict, n: int | None = None):
    if geom["kind"] == "cube":
        return build_cube_mesh(int(n or geom.get("n", 2)))
    return build_cylinder_mesh(
        int(geom.get("n_radial", 2)),
        int(geom.get("n_axial", 2)),
        int(geom.get("n_angular", 12)),
        float(geom.get("radius", 1.0)),
        float(geom.get("height", 1.0)),
    )


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    return obj


def _write_json(path, data):
    Path(path).write_text(json.dumps(_jsonable(data), indent=2, sort_keys=True) + "\n")


def _eigen_split(cfg: RunConfig, ops):
    s = cfg.solver
    return maxwell_eigenpairs(
        ops,
        s.get("K"),
        tol_eig=float(s.get("tol_eig", 1e-8)),
        near_one_tol=s.get("near_one_tol"),
        seed=cfg.seed,
    )


def _run_eigens(cfg: RunConfig, out: Path) -> tuple[int, dict]:
    mesh = _mesh(cfg.geometry)
    ops = MaxwellOperators.assemble(mesh, cfg.mu, cfg.V)
    split = _eigen_split(cfg, ops)
    write_eigen_csv(out / "eigenvalues.csv", split)
    if cfg.output.get("matrices"):
        _dump_matrices(out, ops)
    report = {
        "n_dofs": ops.n,
        "n_potentials": ops.n_potentials,
        "eigenvalues": split.eigenvalues,
        "max_residual": float(split.residuals.max()),
        "max_div_residual": float(split.div_residuals.max()),
        "split_index": split.split_index,
        "near_one_tol": split.near_one_tol,
        "method": split.method,
    }
    return EXIT_OK, report


def _dump_matrices(out: Path, ops):
    write_matrix_market(out / "A.mtx", ops.A)
    write_matrix_market(out / "M.mtx", ops.M)
    import scipy.io

    scipy.io.mmwrite(str(out / "G.mtx"), ops.G.tocoo())


def _field_report(problem: FieldProblem, res) -> dict:
    d = problem.decompose(res.x)
    return {
        "energy": res.energy,
        "residual": res.residual,
        "converged": res.converged,
        "classification": res.classification,
        "norm_v": d["norm_v"],
        "norm_w": d["norm_w"],
        "Q_v": d["Q_v"],
        "int_F": d["int_F"],
        "helmholtz_orthogonality": d["orthogonality"],
    }


def _hypothesis_summary(model, cfg) -> dict:
    rep = check_hypotheses(model, int(cfg.solver.get("samples", 2000)), cfg.seed)
    return {"violations": rep["violations"], "min_slacks": {k: e.get("min_slack") for k, e in rep["entries"].items()}}


def _solve_field(cfg: RunConfig, out: Path, method: str) -> tuple[int, dict]:
    mesh = _mesh(cfg.geometry)
    ops = MaxwellOperators.assemble(mesh, cfg.mu, cfg.V)
    split = _eigen_split(cfg, ops)
    write_eigen_csv(out / "eigenvalues.csv", split)
    bases = spectral_split(ops, split)
    problem = FieldProblem(ops, cfg.model, bases)
    tol = float(cfg.solver.get("tol", 1e-7))
    status = EXIT_OK
    if method == "nehari":
        try:
            res = ground_state(problem, int(cfg.solver.get("n_starts", 10)), cfg.seed, tol, cfg.threads, maxiter=int(cfg.solver.get("maxiter", 2000)))
        except ConvergenceError as exc:
            if exc.result is None:
                raise
            res = exc.result
            status = EXIT_SOLVER
    else:
        rng = np.random.default_rng(cfg.seed)
        start = far_point(problem, problem.random_plus(rng))
        res = mountain_pass_cM(
            problem,
            start,
            tol=tol,
            n_nodes=int(cfg.solver.get("n_nodes", 17)),
            maxiter=int(cfg.solver.get("maxiter", 3000)),
        )
        if not res.converged:
            status = EXIT_SOLVER
    write_trace_csv(out / "trace.csv", res.trace)
    write_vtk(out / "solution.vtk", mesh, point_vectors={"E": vertex_average(mesh, res.x)})
    if cfg.output.get("matrices"):
        _dump_matrices(out, ops)
    report = _field_report(problem, res)
    report.update(
        {
            "lambda_1": float(split.eigenvalues[0]),
            "dim_tilde": bases.dim_tilde,
            "n_dofs": ops.n,
            "tol": tol,
            "status": res.extra.get("status"),
            "start_energies": res.extra.get("start_energies"),
            "mirror_energy": res.extra.get("mirror_energy"),
            "hypotheses": _hypothesis_summary(cfg.model, cfg),
        }
    )
    return status, report


def _run_symmetric(cfg: RunConfig, out: Path, kind: str) -> tuple[int, dict]:
    from .symmetry import SymmetricConfig, solve_betagamma_ground_state, solve_tau_ground_state, write_meridian_csv

    g, s, sym = cfg.geometry, cfg.solver, cfg.symmetric
    lift_mesh = sym.get("lift_mesh", [g.get("n_radial", 2), g.get("n_axial", 2), g.get("n_angular", 12)])
    scfg = SymmetricConfig(
        mu=cfg.mu,
        V=cfg.V,
        model=cfg.model,
        radius=float(g.get("radius", 1.0)),
        height=float(g.get("height", 1.0)),
        n_r=int(sym.get("n_r", 6)),
        n_z=int(sym.get("n_z", 6)),
        n_starts=int(s.get("n_starts", 6)),
        seed=cfg.seed,
        tol=float(s.get("tol", 1e-7)),
        K=s.get("K"),
        near_one_tol=s.get("near_one_tol"),
        threads=cfg.threads,
        lift_mesh=tuple(int(v) for v in lift_mesh),
        lift_angular=tuple(int(v) for v in sym.get("lift_angular", ())),
    )
    solve = solve_tau_ground_state if kind == "tau" else solve_betagamma_ground_state
    try:
        res = solve(scfg)
    except ValueError as exc:
        if type(exc).__name__ == "SymmetryError":
            raise ConfigError(f"mu/V/nonlinearity: {exc}") from exc
        raise
    mm = res.extra["meridian_mesh"]
    write_meridian_csv(out / "meridian.csv", mm, res)
    write_trace_csv(out / "trace.csv", res.trace)
    lift = res.extra["lift"]
    write_vtk(out / "solution.vtk", lift["mesh3d"], point_vectors={"E": vertex_average(lift["mesh3d"], lift["field"])})
    report = {
        "kind": kind,
        "energy": res.energy,
        "residual": res.residual,
        "converged": res.converged,
        "eigenvalues": res.extra["eigenvalues"],
        "dim_tilde": res.extra["dim_tilde"],
        "linking_level": res.extra["linking_level"],
        "start_energies": res.extra.get("start_energies"),
        "lift": {k: v for k, v in lift.items() if k not in ("field", "mesh3d", "ops3d")},
        "lift_energy_study": res.extra.get("lift_energy_study"),
    }
    return EXIT_OK, report


def _run_hypothesis(cfg: RunConfig, out: Path) -> tuple[int, dict]:
    rep = check_hypotheses(cfg.model, int(cfg.solver.get("samples", 10_000)), cfg.seed)
    return (EXIT_HYPOTHESIS if rep["violations"] else EXIT_OK), rep


def convergence_sweep(cfg: RunConfig, out: Path | None = None) -> list[dict]:
    """Repeat an eigenvalue or energy computation over cube refinements ``sweep.levels``.

    Rows carry ``h_max``, the value, the difference to the finest level and,
    when ``sweep.reference`` is given, the error against that reference.
    """
    quantity = cfg.sweep.get("quantity", "eigenvalue")
    ref = cfg.sweep.get("reference")
    rows = []
    for n in cfg.sweep["levels"]:
        mesh = build_cube_mesh(int(n))
        ops = MaxwellOperators.assemble(mesh, cfg.mu, cfg.V)
        h = float(np.max(np.linalg.norm(mesh.vertices[mesh.edges[:, 1]] - mesh.vertices[mesh.edges[:, 0]], axis=1)))
        if quantity == "eigenvalue":
            split = maxwell_eigenpairs(ops, min(int(cfg.solver.get("K", 1)), ops.n - ops.n_potentials), seed=cfg.seed)
            value = float(split.eigenvalues[0])
        else:
            split = _eigen_split(cfg, ops)
            problem = FieldProblem(ops, cfg.model, spectral_split(ops, split))
            value = ground_state(problem, int(cfg.solver.get("n_starts", 4)), cfg.seed, float(cfg.solver.get("tol", 1e-7)), cfg.threads).energy
        rows.append({"n": int(n), "h_max": h, "value": value})
    finest = rows[int(np.argmax([r["n"] for r in rows]))]["value"]
    for r in rows:
        r["error_vs_finest"] = abs(r["value"] - finest)
        if ref is not None:
            r["error_vs_reference"] = abs(r["value"] - float(ref))
    if out is not None:
        keys = list(rows[0].keys())
        with open(out / "sweep.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(keys)
            for r in rows:
                w.writerow([repr(r[k]) if isinstance(r[k], float) else r[k] for k in keys])
    return rows


def _run_sweep(cfg: RunConfig, out: Path) -> tuple[int, dict]:
    rows = convergence_sweep(cfg, out)
    return EXIT_OK, {"quantity": cfg.sweep.get("quantity", "eigenvalue"), "rows": rows}


def manifest(cfg: RunConfig, argv) -> dict:
    return {
        "config": cfg.raw,
        "mode": cfg.mode,
        "seed": cfg.seed,
        "threads": cfg.threads,
        "argv": list(argv),
        "versions": {
            "nlmaxwell": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
        },
    }


def run(config_path, out_dir=None, seed=None, threads=None, argv=()) -> int:
    """Execute one configured run; returns the process exit code."""
    try:
        cfg = load_config(config_path, seed, threads)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = Path(out_dir or cfg.output.get("dir", "out"))
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "manifest.json", manifest(cfg, argv))
    runners = {
        "eigens": _run_eigens,
        "ground_state_nehari": lambda c, o: _solve_field(c, o, "nehari"),
        "ground_state_mp": lambda c, o: _solve_field(c, o, "mp"),
        "tau_symmetric": lambda c, o: _run_symmetric(c, o, "tau"),
        "betagamma_symmetric": lambda c, o: _run_symmetric(c, o, "betagamma"),
        "hypothesis_check": _run_hypothesis,
        "convergence_sweep": _run_sweep,
    }
    try:
        code, report = runners[cfg.mode](cfg, out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ConvergenceError, NehariError, NonConcavityError, EigenSolverError, SaddlePointError, InsufficientSpectrumError) as exc:
        payload = {"error": type(exc).__name__, "message": str(exc)}
        for attr in ("eigenvalues", "residuals"):
            if getattr(exc, attr, None) is not None:
                payload[attr] = getattr(exc, attr)
        _write_json(out / "report.json", {"mode": cfg.mode, "failure": payload})
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    report = {"mode": cfg.mode, "seed": cfg.seed, **report}
    _write_json(out / "report.json", report)
    return code


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = argparse.ArgumentParser(prog="nlmaxwell", description="Nonlinear Maxwell critical-point solver")
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("solve", help="run a TOML configuration")
    p.add_argument("config", help="path to the TOML run configuration")
    p.add_argument("--out", default=None, help="output directory (default: output.dir or ./out)")
    p.add_argument("--seed", type=int, default=None, help="override the configured seed")
    p.add_argument("--threads", type=int, default=None, help="worker threads for multi-start solves")
    args = parser.parse_args(argv)
    return run(args.config, args.out, args.seed, args.threads, argv)


if __name__ == "__main__":
    sys.exit(main())
