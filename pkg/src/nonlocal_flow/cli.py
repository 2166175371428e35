"""
Command-line front end: ``nonlocal-flow run <config.json>`` and
``nonlocal-flow batch <dir> --jobs K``.

Exit status: 0 on success, 2 when a check reports ``passed = false``,
1 on any error (including schema violations).
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import jsonschema
import numpy as np

from . import exponents as expo
from . import properties as props
from .energy import Dirichlet, EnergySpec, Neumann, PowerRobin
from .flow import FlowConfig, run_flow, two_node_closed_form
from .scenarios import build_space, data_path, regression_set
from .solver import SolveOptions, elliptic_extension, solve_elliptic
from .space import check_thickness
from .spectral import (assemble_p2_operator, balakrishnan_power, kernel_to_csv, spectral_power,
                       subordinated_kernel, LogQuadrature)

log = logging.getLogger("nonlocal_flow")

EXIT_OK, EXIT_ERROR, EXIT_CHECK = 0, 1, 2

_num_or_list = {"oneOf": [{"type": "number"}, {"type": "array", "items": {"type": "number"}}]}

SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "nonlocal-flow scenario",
    "type": "object",
    "required": ["schema", "task"],
    "properties": {
        "schema": {"const": 1},
        "name": {"type": "string"},
        "task": {"enum": ["solve", "extend", "flow", "spectral", "exponents", "check"]},
        "seed": {"type": "integer", "minimum": 0},
        "space": {
            "oneOf": [
                {"type": "object", "required": ["graph"], "additionalProperties": False,
                 "properties": {"graph": {"type": "string"},
                                "vertex_weights": {"type": "object",
                                                   "additionalProperties": {"type": "number"}}}},
                {"type": "object", "required": ["omega", "hat", "grid", "theta"],
                 "additionalProperties": False,
                 "properties": {
                     "omega": {"type": "array", "items": {"type": "array", "minItems": 2, "maxItems": 2}},
                     "hat": {"type": "array", "items": {"type": "array", "minItems": 2, "maxItems": 2}},
                     "grid": {"oneOf": [{"type": "integer"}, {"type": "array", "items": {"type": "integer"}}]},
                     "theta": {"type": "number"},
                     "rule": {"oneOf": [{"enum": ["full", "coupled"]},
                                        {"type": "object", "required": ["kind", "radius"],
                                         "properties": {"kind": {"const": "range"},
                                                        "radius": {"type": "number"}}}]}}},
            ]},
        "p": {"oneOf": [{"type": "number", "exclusiveMinimum": 1},
                        {"type": "array", "items": {"type": "number", "exclusiveMinimum": 1}}]},
        "theta": _num_or_list,
        "N": {"oneOf": [{"type": "integer", "minimum": 1},
                        {"type": "array", "items": {"type": "integer", "minimum": 1}}]},
        "q": _num_or_list,
        "potential": {
            "type": "object", "required": ["kind"],
            "properties": {
                "kind": {"enum": ["neumann", "robin", "dirichlet"]},
                "kappa": _num_or_list,
                "q": {"type": "number", "minimum": 2},
                "support": {"enum": ["exterior", "all"]},
            }},
        "nu": _num_or_list,
        "solver": {"type": "object", "additionalProperties": False,
                   "properties": {"tol": {"type": "number", "exclusiveMinimum": 0},
                                  "max_sweeps": {"type": "integer", "minimum": 1},
                                  "onedim_tol": {"type": "number", "exclusiveMinimum": 0}}},
        "params": {"type": "object"},
    },
    "allOf": [
        {"if": {"properties": {"task": {"enum": ["solve", "extend", "flow", "spectral"]}}},
         "then": {"required": ["space", "p"], "properties": {"p": {"type": "number"}}}},
        {"if": {"properties": {"task": {"const": "exponents"}}},
         "then": {"required": ["N", "theta", "p", "q"]}},
    ],
}


class ConfigError(ValueError):
    pass


def load_config(path: Path) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config: {exc}") from exc
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    errors = sorted(jsonschema.Draft202012Validator(SCHEMA).iter_errors(cfg), key=lambda e: list(e.path))
    if errors:
        lines = [f"{path}: field '{'/'.join(map(str, e.path)) or '<root>'}': {e.message}" for e in errors]
        raise ConfigError("\n".join(lines))
    return cfg


# ---------------------------------------------------------------------------
# helpers

def _fmt(v) -> str:
    return "%.17g" % float(v)


def _write_csv(path: Path, header, rows) -> None:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\r\n")
        w.writerow(header)
        w.writerows(rows)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating, float)):
        f = float(obj)
        return f if np.isfinite(f) else str(f)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def _resolve_graph(desc: dict, base: Path) -> dict:
    desc = dict(desc)
    g = desc.get("graph")
    if g is not None:
        if g.startswith("bundled:"):
            desc["graph"] = str(data_path(g.split(":", 1)[1]))
        elif not os.path.isabs(g):
            desc["graph"] = str(base / g)
        if not os.path.exists(desc["graph"]):
            raise ConfigError(f"graph file not found: {desc['graph']}")
    return desc


def _per_point(value, n, default):
    if value is None:
        return np.full(n, default)
    arr = np.asarray(value, dtype=float)
    return np.full(n, float(arr)) if arr.ndim == 0 else arr


def _restricted(value, n, rng, name):
    if isinstance(value, str):
        if value == "random":
            return rng.normal(size=n)
        raise ConfigError(f"{name}: unknown generator {value!r}")
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        return np.full(n, float(arr))
    if arr.shape != (n,):
        raise ConfigError(f"{name}: expected {n} values on Omega, got {arr.size}")
    return arr


def build_spec(cfg: dict, base: Path) -> EnergySpec:
    p = float(cfg["p"])
    space, kernel = build_space(_resolve_graph(cfg["space"], base), p)
    rep = check_thickness(space, kernel)
    if not rep.reachable:
        log.warning("thickness check failed: unreachable points %s", rep.unreachable_indices)
    n = space.n_points
    pot_cfg = cfg.get("potential", {"kind": "neumann"})
    kind = pot_cfg["kind"]
    if kind == "neumann":
        pot = Neumann()
    elif kind == "dirichlet":
        pot = Dirichlet(~space.omega_mask)
    else:
        kappa = _per_point(pot_cfg.get("kappa", 1.0), n, 1.0)
        if pot_cfg.get("support", "exterior") == "exterior":
            kappa = np.where(space.omega_mask, 0.0, kappa)
        pot = PowerRobin(kappa, float(pot_cfg.get("q", 2.0)))
    nu = _per_point(cfg.get("nu"), n, 1.0)
    return EnergySpec(space, kernel, p, pot, nu)


def _solver_opts(cfg) -> SolveOptions:
    return SolveOptions(**cfg.get("solver", {}))


# ---------------------------------------------------------------------------
# tasks

def _task_solve(cfg, base, out, rng):
    spec = build_spec(cfg, base)
    params = cfg.get("params", {})
    f = _restricted(params.get("f", 0.0), spec.space.n_omega, rng, "params.f")
    u_hat, rep = solve_elliptic(spec, f, _solver_opts(cfg))
    _dump_extension(out / "solution.csv", spec, u_hat)
    return {"solve": rep.__dict__}, rep.converged


def _task_extend(cfg, base, out, rng):
    spec = build_spec(cfg, base)
    params = cfg.get("params", {})
    u = _restricted(params.get("u", "random"), spec.space.n_omega, rng, "params.u")
    u_hat, rep = elliptic_extension(spec, u, _solver_opts(cfg))
    _dump_extension(out / "solution.csv", spec, u_hat)
    return {"extend": rep.__dict__}, rep.converged


def _dump_extension(path, spec, u_hat):
    om = spec.space.omega_mask
    _write_csv(path, ["index", "in_omega", "value"],
               [[i, int(om[i]), _fmt(v)] for i, v in enumerate(u_hat)])


def _flow_config(params, n_omega, rng) -> FlowConfig:
    tau = float(params.get("tau", 1e-2))
    if "n_steps" in params:
        n_steps = int(params["n_steps"])
    else:
        n_steps = int(round(float(params.get("t_end", 1.0)) / tau))
    forcing = params.get("forcing")
    if forcing is not None:
        forcing = _restricted(forcing, n_omega, rng, "params.forcing")
    return FlowConfig(tau, n_steps, forcing, int(params.get("record_every", 1)),
                      float(params.get("q", 2.0)))


def _task_flow(cfg, base, out, rng):
    spec = build_spec(cfg, base)
    params = cfg.get("params", {})
    n = spec.space.n_omega
    u0 = _restricted(params.get("u0", "random"), n, rng, "params.u0")
    fc = _flow_config(params, n, rng)
    traj = run_flow(spec, u0, fc, _solver_opts(cfg))
    traj.to_csv(out / "trajectory.csv", out / "states" if params.get("dump_states") else None)
    report = {"flow": {"ok": traj.ok, "failure": traj.failure, "n_records": len(traj),
                       "final_time": traj.times[-1], "final_energy": traj.energies[-1],
                       "final_state": traj.states[-1]}}
    if spec.space.n_points == 2 and n == 2 and spec.kernel.n_pairs == 1 \
            and isinstance(spec.potential, Neumann):
        exact = two_node_closed_form(spec.p, float(spec.kernel.weights[0]), spec.space.mu, u0,
                                     traj.times[-1])
        report["flow"]["closed_form"] = exact
        report["flow"]["closed_form_error"] = float(np.max(np.abs(traj.states[-1] - exact)))
    return report, traj.ok


def _task_spectral(cfg, base, out, rng):
    spec = build_spec(cfg, base)
    params = cfg.get("params", {})
    thetas = np.atleast_1d(np.asarray(cfg.get("theta", params.get("theta", 0.5)), dtype=float))
    op = assemble_p2_operator(spec)
    op.to_csv(out / "eigenvalues.csv")
    quad = LogQuadrature(**params.get("quadrature", {}))
    u = _restricted(params.get("u", "random"), op.dim, rng, "params.u")
    rows = []
    for th in thetas:
        exact = spectral_power(op, th, u)
        approx, est = balakrishnan_power(op, th, u, quad)
        K, kappa = subordinated_kernel(op, th, quad)
        kernel_to_csv(K, out / f"kernel_theta_{th:g}.csv")
        rel = float(np.linalg.norm(approx - exact) / max(np.linalg.norm(exact), 1e-300))
        rows.append({"theta": th, "relative_gap": rel, "error_estimate": est,
                     "kappa_max": float(np.max(np.abs(kappa)))})
    return {"spectral": {"dim": op.dim, "eigenvalues": op.eigenvalues, "powers": rows}}, True


def _task_exponents(cfg, base, out, rng):
    grid = [np.atleast_1d(cfg[k]).tolist() for k in ("N", "theta", "p", "q")]
    combos = [(int(N), float(t), float(p), float(q))
              for N in grid[0] for t in grid[1] for p in grid[2] for q in grid[3]]
    expo.write_table(combos, out / "exponents.csv")
    rows = []
    for N, t, p, q in combos:
        e = expo.exponents(N, t, p, q)
        rows.append({"N": N, "theta": t, "p": p, "q": q, "alpha": e.alpha, "beta": e.beta,
                     "gamma": e.gamma, "regime": e.regime})
    return {"exponents": rows}, True


def _suite_specs(cfg, base):
    """Scenarios for check suites: the configured space, or the regression set."""
    if "space" in cfg:
        spec = build_spec(cfg, base)
        robin = cfg.get("params", {}).get("robin", {"kappa": 1.0, "q": 2.0})
        return [(cfg.get("name", "config"), spec, robin, None)]
    return [(sc.name, sc.robin_spec(), sc.robin, sc) for sc in regression_set()]


def _task_check(cfg, base, out, rng):
    params = cfg.get("params", {})
    suite = params.get("suite", "markov_suite")
    seed = int(cfg.get("seed", 0))
    opts = _solver_opts(cfg)
    jobs = int(os.environ.get("NONLOCAL_FLOW_THREADS", "1") or 1)
    reports = []
    if suite == "scalar_lemmas":
        reports = props.scalar_lemma_suite(int(params.get("samples", 100_000)), seed)
    elif suite in ("markov_suite", "domination", "decay"):
        for name, spec, robin, sc in _suite_specs(cfg, base):
            tau = float(params.get("tau", sc.tau if sc else 1e-2))
            n_steps = int(params.get("n_steps", sc.n_steps if sc else 100))
            fc = FlowConfig(tau, n_steps, record_every=int(params.get("record_every", 1)))
            trials = int(params.get("trials", sc.trials if sc else 3))
            if suite == "markov_suite":
                for r in props.markov_suite(spec, fc, seed, trials, opts, jobs):
                    r.name = f"{name}:{r.name}"
                    reports.append(r)
            elif suite == "domination":
                u0 = np.random.default_rng(seed).normal(size=spec.space.n_omega)
                r = props.domination_trajectory_suite(spec.space, spec.kernel, spec.p, robin,
                                                      fc, u0, opts, jobs)
                r.name = f"{name}:{r.name}"
                reports.append(r)
            else:
                reports.append(_decay_check(name, spec, fc, seed, opts, out, params))
    else:
        raise ConfigError(f"unknown check suite {suite!r}")
    passed = all(r.passed for r in reports)
    return {"check": {"suite": suite, "passed": passed,
                      "reports": [r.as_dict() for r in reports]}}, passed


def _decay_check(name, spec, fc, seed, opts, out, params):
    rng = np.random.default_rng(seed)
    n = spec.space.n_omega
    u0, v0 = rng.normal(size=n), rng.normal(size=n)
    tu, tv = run_flow(spec, u0, fc, opts), run_flow(spec, v0, fc, opts)
    coords = spec.space.coords
    N = int(params.get("N", coords.shape[1] if coords is not None and coords.ndim == 2 else 1))
    q = float(params.get("q", 2.0))
    # exponents only scale the fitted diagnostics
    exps = expo.exponents(N, float(params.get("theta", 0.5)), max(spec.p, 2.0), q)
    tol = 100 * opts.tol * max(1.0, float(np.max(np.abs(u0))), float(np.max(np.abs(v0))))
    rep = props.decay_report(tu, tv, spec.space.mu_omega, q, exps,
                             neumann=isinstance(spec.potential, Neumann), tol=tol)
    rep.to_csv(out / f"decay_{name}.csv")
    return props.CheckReport(f"{name}:decay_monotone", 1, rep.max_increase, tol, rep.as_dict())


TASKS = {"solve": _task_solve, "extend": _task_extend, "flow": _task_flow,
         "spectral": _task_spectral, "exponents": _task_exponents, "check": _task_check}


def run_scenario(config_path, out_dir=None) -> int:
    """Execute one config; returns the process exit status."""
    config_path = Path(config_path)
    try:
        cfg = load_config(config_path)
        out = Path(out_dir) if out_dir else Path("out") / config_path.stem
        out.mkdir(parents=True, exist_ok=True)
        rng = np.random.default_rng(int(cfg.get("seed", 0)))
        report, ok = TASKS[cfg["task"]](cfg, config_path.parent, out, rng)
    except ConfigError as exc:
        log.error("%s", exc)
        return EXIT_ERROR
    except Exception as exc:  # noqa: BLE001 - every failure maps to exit 1
        log.error("%s: %s: %s", config_path, type(exc).__name__, exc)
        log.debug("traceback", exc_info=True)
        return EXIT_ERROR
    report = {"schema": 1, "name": cfg.get("name", config_path.stem), "task": cfg["task"],
              "passed": bool(ok), **report}
    (out / "report.json").write_text(json.dumps(_jsonable(report), indent=2, sort_keys=True) + "\n")
    log.info("%s: %s", config_path.name, "ok" if ok else "check failed")
    return EXIT_OK if ok else EXIT_CHECK


def _run_one(args):
    path, out, level = args
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    return run_scenario(path, out)


def run_batch(directory, out_root, jobs: int, level) -> int:
    configs = sorted(Path(directory).glob("*.json"))
    if not configs:
        log.error("no *.json configs in %s", directory)
        return EXIT_ERROR
    out_root = Path(out_root or "out")
    work = [(c, out_root / c.stem, level) for c in configs]
    if jobs > 1:
        with ProcessPoolExecutor(jobs) as ex:
            codes = list(ex.map(_run_one, work))
    else:
        codes = [_run_one(w) for w in work]
    for c, code in zip(configs, codes):
        log.info("%s -> exit %d", c.name, code)
    if EXIT_ERROR in codes:
        return EXIT_ERROR
    return EXIT_CHECK if EXIT_CHECK in codes else EXIT_OK


def _apply_threads():
    val = os.environ.get("NONLOCAL_FLOW_THREADS")
    if not val:
        return
    import numba
    numba.set_num_threads(max(1, min(int(val), numba.config.NUMBA_NUM_THREADS)))


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="nonlocal-flow", description="Run nonlocal p-energy scenarios from JSON configs.")
    ap.add_argument("--log-level", default="INFO",
                    choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    ap.add_argument("--out", help="output directory (run) or root directory (batch)")
    sub = ap.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run one scenario config")
    r.add_argument("config")
    b = sub.add_parser("batch", help="run every *.json config in a directory")
    b.add_argument("directory")
    b.add_argument("--jobs", type=int, default=1)
    sub.add_parser("schema", help="print the config JSON schema")
    args = ap.parse_args(argv)
    level = getattr(logging, args.log_level)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    _apply_threads()
    if args.command == "schema":
        print(json.dumps(SCHEMA, indent=2))
        return EXIT_OK
    if args.command == "run":
        return run_scenario(args.config, args.out)
    return run_batch(args.directory, args.out, max(1, args.jobs), level)


if __name__ == "__main__":
    sys.exit(main())
