"""Study drivers behind the command-line interface.

Each ``cmd_*`` function takes a :class:`~llgfem.config.StudyConfig`, runs
the sweep it describes, writes CSV/JSON output into ``config.out`` and
returns a result dict. Sweep points are independent jobs; with
``jobs > 1`` they run in worker processes and are merged by ladder index.
"""

from __future__ import annotations

import csv
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import fem
from .config import ConfigError, StudyConfig, TauRule
from .integrators import MidpointConfig, Problem, SolverConfig, run_simulation
from .mesh import Mesh, build_structured_mesh
from .observables import eoc, error_vs_reference
from .problems import get_problem

__all__ = [
    "TRAJECTORY_COLUMNS",
    "time_grid",
    "study_mesh",
    "cmd_run",
    "cmd_convergence_time",
    "cmd_convergence_space",
    "cmd_constraint_study",
    "cmd_cfl_study",
    "write_eoc_csv",
    "COMMAND_TABLE",
]

TRAJECTORY_COLUMNS = (
    "j",
    "t",
    "energy",
    "h1_semi",
    "w1inf_semi",
    "linf_nodal",
    "nodal_l1_dev",
    "quad_l1_dev",
    "v_norm_sq",
    "energy_identity_residual",
)

# per-problem defaults: mesh pattern and level of single runs, reference step size
_RUN_DEFAULTS = {
    "radial": {"pattern": "crisscross", "level": 2, "tau": 4e-3},
    "manufactured": {"pattern": "diagonal", "level": 4, "tau": 5e-4},
    "blowup": {"pattern": "diagonal", "level": 4, "tau_rule": TauRule(0.1, 1.0)},
}


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    if math.isnan(x):
        return "nan"
    return f"{x:.17g}"


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) if not isinstance(v, str) else v for v in row])


def _write_json(path, payload):
    def default(o):
        if isinstance(o, (np.floating, np.integer)):
            return o.item()
        if isinstance(o, np.ndarray):
            return o.tolist()
        return str(o)

    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True, default=default)
        fh.write("\n")


def time_grid(T: float, tau: float, mode: str = "fit") -> tuple[int, float]:
    """Number of steps and covered final time for a nominal step size.

    ``fit`` keeps ``T`` and uses ``N = ceil(T / tau)`` steps of size
    ``T / N <= tau``. ``truncate`` keeps ``tau`` and stops at
    ``N tau <= T`` with ``N = floor(T / tau)``. ``nearest`` keeps ``tau``
    and takes ``N = floor(T / tau + 1/2)`` steps, so the final time ``N tau``
    is the grid point closest to ``T`` (ties go up).
    """
    if not tau > 0:
        raise ConfigError("time step must be positive")
    ratio = T / tau
    near = round(ratio)
    if abs(ratio - near) <= 1e-9 * max(1.0, ratio):
        n = int(near)
    elif mode == "fit":
        n = math.ceil(ratio)
    elif mode == "nearest":
        n = math.floor(ratio + 0.5 + 1e-9)
    elif mode == "truncate":
        n = math.floor(ratio)
    else:
        raise ConfigError(f"unknown time grid {mode!r}")
    if n < 1:
        raise ConfigError(f"time step {tau} exceeds the final time {T}")
    return n, (T if mode == "fit" else n * tau)


def study_mesh(problem_name: str, level: int, pattern: str) -> Mesh:
    return build_structured_mesh(get_problem(problem_name).domain, level, pattern)


def _problem_params(cfg: StudyConfig) -> dict:
    return {"lambda_sq": cfg.lambda_sq} if cfg.lambda_sq is not None and cfg.problem == "radial" else {}


@dataclass(frozen=True)
class _Job:
    """One trajectory of a sweep; everything here is picklable."""

    problem: str
    problem_params: tuple
    level: int
    pattern: str
    scheme: str
    N: int
    T: float
    alpha: float
    lambda_sq: float
    study: StudyConfig
    want: tuple = ()  # extra outputs: "final", "analytic", "records"


def _make_job(cfg: StudyConfig, level, pattern, scheme, N, T, want=()) -> _Job:
    bench = get_problem(cfg.problem, **_problem_params(cfg))
    return _Job(
        problem=cfg.problem,
        problem_params=tuple(sorted(_problem_params(cfg).items())),
        level=level,
        pattern=pattern,
        scheme=scheme,
        N=N,
        T=T,
        alpha=cfg.alpha if cfg.alpha is not None else bench.alpha,
        lambda_sq=cfg.lambda_sq if cfg.lambda_sq is not None else bench.lambda_sq,
        study=cfg,
        want=tuple(want),
    )


def _solver_config(job: _Job) -> SolverConfig:
    st = job.study
    return SolverConfig(
        alpha=job.alpha,
        lambda_sq=job.lambda_sq,
        T=job.T,
        N=job.N,
        scheme=job.scheme,
        linear=st.linear_config(),
        midpoint=MidpointConfig(st.fp_tolerance, st.fp_max_iterations),
        tps_field=st.tps_field,
    )


def _execute(job: _Job) -> dict:
    bench = get_problem(job.problem, **dict(job.problem_params))
    mesh = build_structured_mesh(bench.domain, job.level, job.pattern)
    problem = Problem.from_benchmark(bench, mesh)
    scfg = _solver_config(job)
    want_analytic = "analytic" in job.want and bench.exact is not None
    traj = run_simulation(problem, scfg, keep_states=want_analytic)
    out = {"summary": traj.summary(), "h": mesh.h, "tau": scfg.tau, "N": scfg.N, "T": scfg.T}
    out["final_record"] = traj.records[-1]
    if "final" in job.want:
        out["final"] = traj.final_state
    if "records" in job.want:
        out["records"] = traj.records
    if want_analytic:
        out["analytic"] = {
            norm: error_vs_reference(traj, bench.exact, norm)
            for norm in ("l2_max", "h1_max", "l2_final", "h1_final")
        }
    return out


def _map(jobs: list[_Job], n_workers: int) -> list[dict]:
    """Run jobs, results in job order regardless of completion order."""
    if n_workers <= 1 or len(jobs) <= 1:
        return [_execute(job) for job in jobs]
    with ProcessPoolExecutor(max_workers=min(n_workers, len(jobs))) as pool:
        return list(pool.map(_execute, jobs))


class _FinalOnly:
    """Minimal trajectory view exposing the final state for reference comparisons."""

    def __init__(self, mesh, result):
        self.mesh = mesh
        self.tau = result["tau"]
        self.T = result["T"]
        self.N = result["N"]
        self._final = result["final"]

    def state(self, j):
        if j != self.N:
            raise KeyError(j)
        return self._final


def _eoc_column(resolutions, errors):
    if len(errors) < 2:
        return [None] * len(errors)
    return [None] + eoc(list(zip(resolutions, errors)))


def write_eoc_csv(path, resolutions, err_l2, err_h1) -> list[list]:
    """Study-level CSV ``resolution, error_l2, error_h1, eoc_l2, eoc_h1``."""
    e2 = _eoc_column(resolutions, err_l2)
    e1 = _eoc_column(resolutions, err_h1)
    rows = [list(r) for r in zip(resolutions, err_l2, err_h1, e2, e1)]
    _write_csv(path, ("resolution", "error_l2", "error_h1", "eoc_l2", "eoc_h1"), rows)
    return rows


def _pattern(cfg: StudyConfig, default: str) -> str:
    return cfg.pattern or default


def _final_time(cfg: StudyConfig, default: float) -> float:
    return cfg.final_time if cfg.final_time is not None else default


# --------------------------------------------------------------------- run


def cmd_run(cfg: StudyConfig) -> dict:
    """Single trajectory; writes ``trajectory.csv``, ``final_state.csv`` and ``summary.json``."""
    defaults = _RUN_DEFAULTS[cfg.problem]
    bench = get_problem(cfg.problem, **_problem_params(cfg))
    level = cfg.level if cfg.level is not None else defaults["level"]
    pattern = _pattern(cfg, defaults["pattern"])
    mesh = build_structured_mesh(bench.domain, level, pattern)
    T = _final_time(cfg, bench.T)
    if cfg.steps is not None:
        N = cfg.steps
    else:
        if cfg.taus:
            tau = cfg.taus[0]
        elif cfg.tau_rules:
            tau = cfg.tau_rules[0](mesh.h)
        elif "tau" in defaults:
            tau = defaults["tau"]
        else:
            tau = defaults["tau_rule"](mesh.h)
        N, T = time_grid(T, tau, cfg.time_grid or "fit")
    scheme = cfg.schemes[0]
    try:
        job = _make_job(cfg, level, pattern, scheme, N, T)
        scfg = _solver_config(job)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    out = cfg.check_output_dir()
    problem = Problem.from_benchmark(bench, mesh)
    traj = run_simulation(problem, scfg, keep_states=False)
    rows = [[rec.get(c, math.nan) for c in TRAJECTORY_COLUMNS] for rec in traj.records]
    _write_csv(os.path.join(out, "trajectory.csv"), TRAJECTORY_COLUMNS, rows)
    fem.write_field_csv(mesh, traj.final_state, os.path.join(out, "final_state.csv"))
    summary = traj.summary()
    summary.update(
        problem=cfg.problem,
        level=level,
        pattern=pattern,
        h=mesh.h,
        T=T,
        alpha=scfg.alpha,
        lambda_sq=scfg.lambda_sq,
        n_vertices=mesh.n_vertices,
        n_triangles=mesh.n_triangles,
        bound_violation_list=traj.monitor.bound_violations,
    )
    if traj.fp_iterations:
        summary["max_fp_iterations"] = max(traj.fp_iterations)
    w = [rec["w1inf_semi"] for rec in traj.records]
    k = int(np.argmax(w))
    summary["w1inf_peak"] = w[k]
    summary["w1inf_peak_time"] = traj.records[k]["t"]
    _write_json(os.path.join(out, "summary.json"), summary)
    return {"summary": summary, "trajectory": traj}


# --------------------------------------------------------- time convergence


def cmd_convergence_time(cfg: StudyConfig) -> dict:
    """Errors and orders under time-step bisection on a fixed mesh.

    Problems without an exact solution are compared at the final time with a
    reference run on the same mesh; the manufactured problem is compared with
    its exact solution via the maximum over all time steps.
    """
    bench = get_problem(cfg.problem, **_problem_params(cfg))
    if cfg.problem == "radial":
        level, pattern, tau0 = 2, "crisscross", 4e-3
    elif cfg.problem == "manufactured":
        level, pattern, tau0 = 4, "diagonal", 0.064
    else:
        level, pattern, tau0 = 4, "diagonal", 0.3 / 8
    level = cfg.level if cfg.level is not None else level
    pattern = _pattern(cfg, pattern)
    T = _final_time(cfg, bench.T)
    bisections, ref_shift = (6, 8) if cfg.full else (4, 6)
    if cfg.taus:
        taus = list(cfg.taus)
    else:
        taus = [tau0 * 2.0**-k for k in range(bisections + 1)]
    analytic = bench.exact is not None
    mode = cfg.time_grid or ("nearest" if analytic else "fit")
    grids = [time_grid(T, tau, mode) for tau in taus]
    out = cfg.check_output_dir()

    results, summaries = {}, []
    for scheme in cfg.schemes:
        if analytic:
            # keep tau exact; the final time moves to the nearest multiple of tau
            jobs = [_make_job(cfg, level, pattern, scheme, N, N * tau, ("analytic",)) for (N, _), tau in zip(grids, taus)]
            res = _map(jobs, cfg.jobs)
            l2 = [r["analytic"]["l2_max"] for r in res]
            h1 = [r["analytic"]["h1_max"] for r in res]
        else:
            tau_ref = tau0 * 2.0**-ref_shift if not cfg.taus else min(taus) / 4.0
            N_ref, _ = time_grid(T, tau_ref, "fit")
            for N, _ in grids:
                if N_ref % N:
                    raise ConfigError("the reference step must divide every step of the ladder")
            jobs = [_make_job(cfg, level, pattern, scheme, N, T, ("final",)) for N, _ in grids]
            jobs.append(_make_job(cfg, level, pattern, scheme, N_ref, T, ("final",)))
            res = _map(jobs, cfg.jobs)
            summaries.append(res[-1]["summary"])
            mesh = build_structured_mesh(bench.domain, level, pattern)
            ref = _FinalOnly(mesh, res[-1])
            res = res[:-1]
            l2 = [error_vs_reference(_FinalOnly(mesh, r), ref, "l2_final") for r in res]
            h1 = [error_vs_reference(_FinalOnly(mesh, r), ref, "h1_final") for r in res]
        summaries += [r["summary"] for r in res]
        resolutions = [r["tau"] for r in res]
        rows = write_eoc_csv(os.path.join(out, f"conv_time_{scheme}.csv"), resolutions, l2, h1)
        results[scheme] = rows
    return {"tables": results, "summaries": summaries}


# -------------------------------------------------------- space convergence


def _stagnation(levels, orders, target):
    for lvl, val in zip(levels[1:], orders[1:]):
        if val is not None and not (val >= 0.5 * target):
            return lvl
    return None


def cmd_convergence_space(cfg: StudyConfig) -> dict:
    """Errors and orders under uniform mesh refinement at fixed ``tau``."""
    bench = get_problem(cfg.problem, **_problem_params(cfg))
    analytic = bench.exact is not None
    pattern = _pattern(cfg, "diagonal")
    if cfg.levels:
        levels = list(cfg.levels)
    elif cfg.problem == "manufactured":
        levels = list(range(1, 7 if cfg.full else 5))
    else:
        levels = list(range(2, 6))
    tau = cfg.taus[0] if cfg.taus else (5e-4 if cfg.problem == "manufactured" else 4e-3)
    T = _final_time(cfg, bench.T)
    N, T = time_grid(T, tau, cfg.time_grid or "fit")
    out = cfg.check_output_dir()

    results, summaries = {}, []
    for scheme in cfg.schemes:
        if analytic:
            jobs = [_make_job(cfg, lvl, pattern, scheme, N, T, ("analytic",)) for lvl in levels]
            res = _map(jobs, cfg.jobs)
            l2 = [r["analytic"]["l2_max"] for r in res]
            h1 = [r["analytic"]["h1_max"] for r in res]
        else:
            ref_level = max(levels) + 2
            jobs = [_make_job(cfg, lvl, pattern, scheme, N, T, ("final",)) for lvl in levels + [ref_level]]
            res = _map(jobs, cfg.jobs)
            summaries.append(res[-1]["summary"])
            ref_mesh = build_structured_mesh(bench.domain, ref_level, pattern)
            ref = _FinalOnly(ref_mesh, res[-1])
            res = res[:-1]
            l2, h1 = [], []
            for lvl, r in zip(levels, res):
                view = _FinalOnly(build_structured_mesh(bench.domain, lvl, pattern), r)
                l2.append(error_vs_reference(view, ref, "l2_final"))
                h1.append(error_vs_reference(view, ref, "h1_final"))
        summaries += [r["summary"] for r in res]
        hs = [r["h"] for r in res]
        rows = write_eoc_csv(os.path.join(out, f"conv_space_{scheme}.csv"), hs, l2, h1)
        results[scheme] = {
            "rows": rows,
            "stagnation_l2": _stagnation(levels, [row[3] for row in rows], 2.0),
            "stagnation_h1": _stagnation(levels, [row[4] for row in rows], 1.0),
        }
    _write_json(
        os.path.join(out, "conv_space_summary.json"),
        {s: {k: v for k, v in d.items() if k != "rows"} for s, d in results.items()},
    )
    return {"tables": results, "summaries": summaries}


# -------------------------------------------------------- constraint study


def cmd_constraint_study(cfg: StudyConfig) -> dict:
    """Final-time deviation from the unit sphere along a bisected tau ladder.

    Also reports ``||v^0||^2`` and ``d2_sum`` per scheme. The manufactured
    problem defaults to the ``nearest`` time grid so that ``tau`` itself is
    bisected exactly.
    """
    bench = get_problem(cfg.problem, **_problem_params(cfg))
    defaults = {
        "radial": (4e-3, bench.T, "fit"),
        "manufactured": (0.064, bench.T, "nearest"),
        "blowup": (0.5, 1.0, "fit"),
    }
    tau0, T_default, mode = defaults[cfg.problem]
    mode = cfg.time_grid or mode
    level = cfg.level if cfg.level is not None else 4
    pattern = _pattern(cfg, "diagonal")
    T = _final_time(cfg, T_default)
    n_bis = {"radial": 6, "manufactured": 9, "blowup": 15}[cfg.problem] if cfg.full else 4
    taus = list(cfg.taus) if cfg.taus else [tau0 * 2.0**-k for k in range(n_bis + 1)]
    grids = [time_grid(T, tau, mode) for tau in taus]
    schemes = [s for s in cfg.schemes if s != "MID"] or ["BDF2"]
    out = cfg.check_output_dir()

    jobs = [
        _make_job(cfg, level, pattern, s, N, T_eff)
        for s in schemes
        for (N, T_eff) in grids
    ]
    res = _map(jobs, cfg.jobs)
    per_scheme = {s: res[i * len(grids) : (i + 1) * len(grids)] for i, s in enumerate(schemes)}
    header = ["tau", "v0_norm_sq"]
    for s in schemes:
        header += [f"dev_nodal_l1_{s}", f"dev_quad_l1_{s}", f"eoc_dev_{s}", f"d2_sum_{s}"]
    columns = {}
    for s in schemes:
        dev = [r["final_record"]["nodal_l1_dev"] for r in per_scheme[s]]
        columns[s] = {
            "dev": dev,
            "quad": [r["final_record"]["quad_l1_dev"] for r in per_scheme[s]],
            "eoc": _eoc_column([r["tau"] for r in per_scheme[s]], dev),
            "d2": [r["summary"]["d2_sum"] for r in per_scheme[s]],
        }
    first = per_scheme[schemes[0]]
    rows = []
    for k, r in enumerate(first):
        row = [r["tau"], r["summary"]["v0_norm_sq"]]
        for s in schemes:
            c = columns[s]
            row += [c["dev"][k], c["quad"][k], c["eoc"][k], c["d2"][k]]
        rows.append(row)
    _write_csv(os.path.join(out, "constraint.csv"), header, rows)
    return {"header": header, "rows": rows, "columns": columns, "summaries": [r["summary"] for r in res]}


# --------------------------------------------------------------- CFL study


_FRACTIONS = tuple(TauRule(1.0 / d) for d in (1, 2, 5, 10, 50, 100))
_POWERS = tuple(TauRule(1.0, a) for a in (0.5, 1.0, 1.5, 2.0, 2.5))


def cmd_cfl_study(cfg: StudyConfig) -> dict:
    """``eta0``, ``eta_n`` and ``C(tau)`` for tau tied to a fixed mesh size."""
    bench = get_problem(cfg.problem, **_problem_params(cfg))
    pattern = _pattern(cfg, "crisscross")
    if cfg.levels:
        levels = list(cfg.levels)
    elif cfg.level is not None:
        levels = [cfg.level]
    else:
        levels = [3, 5] if cfg.full else [3]
    if cfg.tau_rules:
        ladders = {"custom": list(cfg.tau_rules)}
    else:
        ladders = {"fractions": list(_FRACTIONS)}
        if cfg.full:
            ladders["powers"] = list(_POWERS)
    T = _final_time(cfg, bench.T)
    out = cfg.check_output_dir()
    results, summaries = {}, []
    for scheme in cfg.schemes:
        rows = []
        for lvl in levels:
            h = build_structured_mesh(bench.domain, lvl, pattern).h
            for name, ladder in ladders.items():
                grids = [time_grid(T, rule(h), cfg.time_grid or "fit") for rule in ladder]
                jobs = [_make_job(cfg, lvl, pattern, scheme, N, T_eff) for N, T_eff in grids]
                res = _map(jobs, cfg.jobs)
                summaries += [r["summary"] for r in res]
                prev = None
                for rule, r in zip(ladder, res):
                    s = r["summary"]
                    decays = "" if prev is None else ("1" if s["cfl_C"] < prev else "0")
                    rows.append([lvl, h, name, str(rule), r["tau"], s["eta0"], s["eta_n"], s["cfl_C"], decays])
                    prev = s["cfl_C"]
        _write_csv(
            os.path.join(out, f"cfl_{scheme}.csv"),
            ("level", "h", "ladder", "rule", "tau", "eta0", "eta_n", "C", "decays"),
            rows,
        )
        results[scheme] = rows
    return {"tables": results, "summaries": summaries}


COMMAND_TABLE = {
    "run": cmd_run,
    "conv-time": cmd_convergence_time,
    "conv-space": cmd_convergence_space,
    "constraint": cmd_constraint_study,
    "cfl": cmd_cfl_study,
}
