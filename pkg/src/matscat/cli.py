"""Batch interface.

Usage::

    matscat <task> --config job.json [--out DIR] [--tol T] [--kmax K] [--threads N] [--plot]

Tasks: forward, bound-states, extract, fullline, weyl, reconstruct, roundtrip.
Flags override the corresponding config fields.  Exit status is 0 on
success, 2 for configuration errors, 3 for numerical failures (the failing
stage is printed) and 4 for I/O errors.

Config layout::

    {
      "problem": {"potential": {...}, "boundary": "dirichlet" | "neumann" | {"U": [[...]]},
                  "line": "half" | "full", "data": "scattering_data.json"},
      "numerics": {"k_grid": {"start": 0.1, "stop": 5, "num": 50}, "gamma": 4.0,
                   "k_max": null, "tol": 1e-6, "rtol": 1e-12, "x_max": null, "threads": 1,
                   "contour": {"radius": null},
                   "weyl_points": [[re, im], ...],
                   "marchenko": {"K": 1000, "dk": 0.25, "h": 0.005, "x_max": 3.0, "mu": 1.0,
                                 "include_bound_states": true}},
      "output": {"dir": "out", "plot": false}
    }
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import fullline as fl
from . import halfline as hl
from . import marchenko as mk
from .errors import BoundaryError, PotentialError, ScatteringError, StageError
from .jost import SolverOptions
from .potentials import PotentialModel, certify_decay, potential_from_json, save_potential_csv
from .serialize import decode_matrix, decode_scalar, dump_json, encode_matrix, encode_scalar, write_matrix_grid, \
    write_plot_data

TASKS = ("forward", "bound-states", "extract", "fullline", "weyl", "reconstruct", "roundtrip")
EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4

DEFAULT_NUMERICS = {
    "k_grid": {"start": 0.1, "stop": 5.0, "num": 50},
    "gamma": 4.0,
    "k_max": None,
    "tol": 1e-6,
    "rtol": 1e-12,
    "x_max": None,
    "threads": 1,
    "contour": {"radius": None},
    "weyl_points": None,
    "marchenko": {},
}


class ConfigError(ValueError):
    """Configuration file or flag violates the job schema."""


@dataclass(frozen=True, eq=False)
class JobConfig:
    task: str
    model: PotentialModel | None
    bc: hl.BoundaryCondition | None
    numerics: dict
    out_dir: Path
    plot: bool
    data_path: Path | None = None

    @property
    def opts(self) -> SolverOptions:
        return SolverOptions(rtol=float(self.numerics["rtol"]), threads=int(self.numerics["threads"]))


def _merge(base: dict, extra: dict) -> dict:
    out = dict(base)
    for key, val in (extra or {}).items():
        out[key] = _merge(out[key], val) if isinstance(out.get(key), dict) and isinstance(val, dict) else val
    return out


def _boundary(desc, n: int) -> hl.BoundaryCondition:
    if desc is None or desc == "dirichlet":
        return hl.dirichlet(n)
    if desc == "neumann":
        return hl.neumann(n)
    if isinstance(desc, dict) and "U" in desc:
        return hl.boundary_from_unitary(decode_matrix(desc["U"], n))
    raise ConfigError(f"boundary must be 'dirichlet', 'neumann' or {{'U': ...}}, got {desc!r}")


def parse_config(raw: dict, task: str, overrides: dict | None = None) -> JobConfig:
    """Validate a raw config dict (flags already folded into ``overrides``)."""
    if task not in TASKS:
        raise ConfigError(f"unknown task {task!r}")
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    overrides = overrides or {}
    problem = raw.get("problem") or {}
    numerics = _merge(DEFAULT_NUMERICS, raw.get("numerics") or {})
    numerics = _merge(numerics, {k: v for k, v in overrides.items() if k in DEFAULT_NUMERICS and v is not None})
    output = raw.get("output") or {}
    out_dir = Path(overrides.get("out") or output.get("dir") or "out")
    plot = bool(overrides.get("plot") or output.get("plot", False))
    data_path = problem.get("data")
    data_path = Path(data_path) if data_path else None

    model = None
    if "potential" in problem:
        pot = dict(problem["potential"])
        if "line" in problem:
            pot["line"] = problem["line"]
        try:
            model = potential_from_json(pot)
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"bad potential description: {exc}") from exc
    elif not (task == "reconstruct" and data_path):
        raise ConfigError("problem.potential is required")

    full_tasks = ("fullline", "weyl")
    half_tasks = ("forward", "extract", "reconstruct", "roundtrip")
    if model is not None:
        if task in full_tasks and model.line != "full":
            raise ConfigError(f"task {task} needs a full-line potential (problem.line = 'full')")
        if task in half_tasks and model.line != "half":
            raise ConfigError(f"task {task} needs a half-line potential")
        if task == "weyl" and not model.is_zero and model.support[0] < 0:
            raise ConfigError("weyl needs a potential vanishing on (-inf, 0)")
    bc = None
    if model is not None and model.line == "half":
        bc = _boundary(problem.get("boundary"), model.n)
        if task in ("reconstruct", "roundtrip") and not bc.is_dirichlet:
            raise ConfigError("reconstruction is implemented for the Dirichlet condition only")
    if task == "reconstruct" and model is None and data_path is None:
        raise ConfigError("reconstruct needs problem.data or problem.potential")
    for key in ("gamma", "tol", "rtol"):
        if not float(numerics[key]) > 0:
            raise ConfigError(f"numerics.{key} must be positive")
    if int(numerics["threads"]) < 1:
        raise ConfigError("numerics.threads must be >= 1")
    return JobConfig(task, model, bc, numerics, out_dir, plot, data_path)


# --------------------------------------------------------------------------- helpers


def _k_grid(numerics) -> np.ndarray:
    grid = numerics["k_grid"]
    if isinstance(grid, dict):
        try:
            ks = np.linspace(float(grid["start"]), float(grid["stop"]), int(grid["num"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"bad k_grid: {exc}") from exc
    else:
        ks = np.array([decode_scalar(v) for v in grid], dtype=complex)
    if np.any(ks == 0):
        raise ConfigError("k_grid must not contain k = 0")
    return ks.astype(complex)


def _certificate(job: JobConfig):
    cert = certify_decay(job.model, float(job.numerics["gamma"]))
    if job.numerics.get("x_max") is not None:
        cert = dataclasses.replace(cert, x_max=float(job.numerics["x_max"]))
    return cert


def _k_max(job: JobConfig) -> float:
    if job.numerics.get("k_max") is not None:
        return float(job.numerics["k_max"])
    return mk.bound_state_bound(job.model) + 0.5


def _marchenko_settings(job: JobConfig) -> mk.MarchenkoSettings:
    fields = {f.name for f in dataclasses.fields(mk.MarchenkoSettings)}
    extra = {k: v for k, v in (job.numerics.get("marchenko") or {}).items() if k in fields}
    unknown = set(job.numerics.get("marchenko") or {}) - fields
    if unknown:
        raise ConfigError(f"unknown marchenko settings {sorted(unknown)}")
    return mk.MarchenkoSettings(**extra)


def _stage(name, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except StageError:
        raise
    except ScatteringError as exc:
        raise StageError(name, exc) from exc


# --------------------------------------------------------------------------- tasks


def run_forward(job: JobConfig) -> dict:
    cert = _certificate(job)
    ks = _k_grid(job.numerics)
    S = _stage("scattering", hl.scattering_matrix_arrays, job.bc, job.model, cert, ks, opts=job.opts)
    Sm = _stage("scattering", hl.scattering_matrix_arrays, job.bc, job.model, cert, -ks, opts=job.opts)
    eye = np.eye(job.model.n)
    real = np.abs(ks.imag) == 0
    unit = float(np.max(np.abs(hl.dagger(S[real]) @ S[real] - eye))) if np.any(real) else None
    inv = float(np.max(np.abs(S @ Sm - eye)))
    out = job.out_dir
    write_matrix_grid(out / "scattering.csv", ks, S)
    write_plot_data(out / "plot_data.csv", ks, S)
    files = ["scattering.csv", "plot_data.csv"]
    if job.plot:
        from .plotting import plot_matrix_moduli
        plot_matrix_moduli(out / "abs_S.png", ks, S, title="half-line |S(k)|")
        files.append("abs_S.png")
    tol = float(job.numerics["tol"])
    return {"k_count": len(ks), "unitarity_defect": unit, "inverse_symmetry_defect": inv,
            "within_tol": bool((unit is None or unit <= tol) and inv <= tol), "files": files}


def run_bound_states(job: JobConfig) -> dict:
    cert = _certificate(job)
    k_max = _k_max(job)
    tol = float(job.numerics["tol"])
    if job.model.line == "half":
        found = _stage("bound-states", hl.find_bound_states, job.bc, job.model, cert, k_max, opts=job.opts)
        records = []
        for b in found:
            nd = _stage("normalization", hl.normalization_direct, job.bc, job.model, cert, b.kj, opts=job.opts)
            rec = {"kj": b.kj, "kj_residual": b.residual, "multiplicity": nd.multiplicity, "Pj": encode_matrix(nd.P),
                   "Cj2": encode_matrix(nd.C2), "err_est": nd.err_est, "simple_pole": b.simple}
            records.append(rec)
    else:
        roots = _stage("bound-states", fl.find_bound_states_fullline, job.model, cert, k_max, opts=job.opts)
        records = []
        for kj in roots:
            rec = {"kj": kj}
            if cert.expmoment_finite and cert.gamma > kj:
                w = _stage("weights", fl.weights_from_scattering, job.model, cert, kj, others=roots, opts=job.opts)
                rec.update(w.to_json())
            records.append(rec)
    dump_json({"bound_states": records, "k_max": k_max, "tol": tol}, job.out_dir / "bound_states.json")
    return {"count": len(records), "kj": [r["kj"] for r in records], "k_max": k_max,
            "files": ["bound_states.json"]}


def run_extract(job: JobConfig) -> dict:
    cert = _certificate(job)
    k_max = min(_k_max(job), cert.gamma * (1 - 1e-6))
    s_eval = hl.s_evaluator(job.bc, job.model, cert, opts=job.opts)
    ks = _k_grid(job.numerics)
    contour_cfg = job.numerics.get("contour") or {}
    data = _stage("extract", hl.extract_scattering_data, s_eval, cert, k_max, ks_real=ks,
                  radius=contour_cfg.get("radius"))
    payload = data.to_json()
    payload["tol"] = float(job.numerics["tol"])
    dump_json(payload, job.out_dir / "scattering_data.json")
    write_matrix_grid(job.out_dir / "scattering.csv", ks, data.S)
    files = ["scattering_data.json", "scattering.csv"]
    if job.plot:
        from .plotting import plot_matrix_moduli
        plot_matrix_moduli(job.out_dir / "abs_S.png", ks, data.S, title="extracted |S(k)|")
        files.append("abs_S.png")
    return {"bound_states": [{"kj": b.kj, "Cj2": encode_matrix(b.C2), "err_est": b.err_est}
                             for b in data.bound_states], "k_max": k_max, "files": files}


def run_fullline(job: JobConfig) -> dict:
    cert = _certificate(job)
    ks = _k_grid(job.numerics)
    q = _stage("quartet", fl.quartet, job.model, cert, ks, opts=job.opts)
    out = job.out_dir
    write_matrix_grid(out / "quartet.csv", ks, q.assembled)
    write_plot_data(out / "plot_data.csv", ks, q.assembled)
    dump_json({"quartet": q.to_json(), "tol": float(job.numerics["tol"])}, out / "quartet.json")
    files = ["quartet.csv", "plot_data.csv", "quartet.json"]
    if job.plot:
        from .plotting import plot_matrix_moduli
        plot_matrix_moduli(out / "abs_scattering.png", ks, q.assembled, title="full-line scattering matrix")
        files.append("abs_scattering.png")
    real = np.abs(ks.imag) == 0
    unit = float(np.max(np.abs(fl.dagger(q.assembled[real]) @ q.assembled[real] - np.eye(2 * job.model.n)))) \
        if np.any(real) else None
    return {"k_count": len(ks), "unitarity_defect": unit, "files": files}


def _weyl_points(numerics) -> np.ndarray:
    pts = numerics.get("weyl_points")
    if pts:
        ks = np.array([decode_scalar(p) for p in pts], dtype=complex)
    else:
        re = np.linspace(-2.0, 2.0, 5)
        im = np.array([0.3, 0.8, 1.3, 1.8])
        ks = (re[None, :] + 1j * im[:, None]).ravel()
    if np.any(ks.imag <= 0):
        raise ConfigError("Weyl points must lie in the open upper half plane")
    return ks


def run_weyl(job: JobConfig) -> dict:
    cert = _certificate(job)
    ks = _weyl_points(job.numerics)
    needed = float(ks.imag.max())
    if not cert.expmoment_finite or cert.gamma <= needed:
        raise ConfigError(f"S_- at Im k = {needed:g} needs numerics.gamma > {needed:g} with finite exponential moment")
    s_eval = fl.sminus_evaluator(job.model, cert, opts=job.opts)
    records, worst = [], 0.0
    for k in ks:
        a = _stage("weyl", fl.weyl_from_reflection, s_eval, k)
        b = _stage("weyl", fl.weyl_direct, job.model, cert, k, opts=job.opts)
        diff = float(np.max(np.abs(a.M - b.M)))
        worst = max(worst, diff)
        records.append({"k": encode_scalar(k), "M_reflection": encode_matrix(a.M), "M_direct": encode_matrix(b.M),
                        "difference": diff})
    tol = float(job.numerics["tol"])
    dump_json({"weyl": records, "tol": tol}, job.out_dir / "weyl.json")
    return {"points": len(records), "max_difference": worst, "within_tol": worst <= tol, "files": ["weyl.json"]}


def _load_data(path: Path):
    obj = json.loads(Path(path).read_text())
    ks = np.array([decode_scalar(r["k"]) for r in obj["S"]])
    S = np.array([decode_matrix(r["matrix"]) for r in obj["S"]])
    states = [(float(b["kj"]), decode_matrix(b["Cj2"])) for b in obj.get("bound_states", [])]
    return ks, S, states


def run_reconstruct(job: JobConfig) -> dict:
    settings = _marchenko_settings(job)
    if job.data_path is not None:
        ks, S, states = _load_data(job.data_path)
    else:
        cert = _certificate(job)
        k_max = min(_k_max(job), cert.gamma * (1 - 1e-6))
        s_eval = hl.s_evaluator(job.bc, job.model, cert, opts=job.opts)
        data = _stage("extract", hl.extract_scattering_data, s_eval, cert, k_max, ks_real=settings.k_grid())
        ks, S, states = data.ks, data.S, [(b.kj, b.C2) for b in data.bound_states]
    if not settings.include_bound_states:
        states = []
    kernel = _stage("kernel", mk.build_kernel, ks.real, S, states, h=settings.h, x_max=settings.x_max,
                    K=settings.K, mu=settings.mu, tail_model=settings.tail_model,
                    decay_tol=1e-2 if settings.include_bound_states else None)
    res = _stage("solve", mk.solve_marchenko, kernel)
    out = job.out_dir
    save_potential_csv(out / "vhat.csv", res.xs, res.V)
    report = {"kernel": kernel.diagnostics, "solve": {"defect": res.defect, "condition": res.condition,
                                                      "hermitian_defect": res.hermitian_defect},
              "files": ["vhat.csv"]}
    if job.model is not None:
        report["metrics"] = mk.compare(res, job.model)
    if job.plot:
        from .plotting import plot_reconstruction
        ref = job.model.evaluate(res.xs) if job.model is not None else None
        plot_reconstruction(out / "vhat.png", res.xs, res.V, ref)
        report["files"].append("vhat.png")
    return report


def run_roundtrip(job: JobConfig) -> dict:
    cert = _certificate(job)
    settings = _marchenko_settings(job)
    if job.numerics.get("k_max") is not None:
        settings = dataclasses.replace(settings, k_max=float(job.numerics["k_max"]))
    rep = mk.roundtrip(job.model, cert, job.bc, settings, opts=job.opts)
    out = job.out_dir
    save_potential_csv(out / "vhat.csv", rep.result.xs, rep.result.V)
    dump_json(rep.timing, out / "timing.json")
    report = rep.to_json()
    report["metrics"]["L1_tolerance"] = 1e-3
    report["metrics"]["within_tolerance"] = rep.metrics["L1"] <= 1e-3
    report["files"] = ["vhat.csv", "timing.json"]
    if job.plot:
        from .plotting import plot_reconstruction
        plot_reconstruction(out / "roundtrip.png", rep.result.xs, rep.result.V, job.model.evaluate(rep.result.xs),
                            title="Marchenko round trip")
        report["files"].append("roundtrip.png")
    return report


RUNNERS = {"forward": run_forward, "bound-states": run_bound_states, "extract": run_extract,
           "fullline": run_fullline, "weyl": run_weyl, "reconstruct": run_reconstruct, "roundtrip": run_roundtrip}


def run(job: JobConfig) -> dict:
    """Execute a validated job and write report.json into the output directory."""
    job.out_dir.mkdir(parents=True, exist_ok=True)
    body = RUNNERS[job.task](job)
    report = {"task": job.task, "status": "ok", "tol": float(job.numerics["tol"]),
              "rtol": float(job.numerics["rtol"]), **body}
    if job.model is not None:
        report["potential"] = job.model.to_json()
    if job.bc is not None:
        report["boundary"] = job.bc.to_json()
    dump_json(report, job.out_dir / "report.json")
    return report


# --------------------------------------------------------------------------- entry point


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON job configuration")
    common.add_argument("--out", type=Path, help="output directory (overrides output.dir)")
    common.add_argument("--tol", type=float, help="reporting tolerance (overrides numerics.tol)")
    common.add_argument("--kmax", type=float, help="upper end of the bound-state search (overrides numerics.k_max)")
    common.add_argument("--threads", type=int, help="worker threads for k-grid sweeps")
    common.add_argument("--plot", action="store_true", help="also render PNG figures")
    parser = argparse.ArgumentParser(prog="matscat", description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(dest="task", required=True)
    for task in TASKS:
        sub.add_parser(task, parents=[common])
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    try:
        raw = json.loads(args.config.read_text()) if args.config else {}
    except OSError as exc:
        print(f"error: cannot read config: {exc}", file=sys.stderr)
        return EXIT_IO
    except json.JSONDecodeError as exc:
        print(f"config error: invalid JSON: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    overrides = {"out": args.out, "tol": args.tol, "k_max": args.kmax, "threads": args.threads, "plot": args.plot}
    try:
        job = parse_config(raw, args.task, overrides)
        report = run(job)
    except np.linalg.LinAlgError as exc:
        print(f"numerical failure in stage '{args.task}': {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, PotentialError, BoundaryError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except StageError as exc:
        print(f"numerical failure in stage '{exc.stage}': {exc.cause}", file=sys.stderr)
        return EXIT_NUMERIC
    except ScatteringError as exc:
        print(f"numerical failure in stage '{args.task}': {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    print(f"{report['task']}: ok -> {job.out_dir}")
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
