"""Command-line front end.

Exit codes: 0 success, 1 input error, 2 solver did not reach Optimal.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .bench import (DEFAULT_SOLVERS, BenchmarkResult, Obstacle, parse_solver, perf_profile, perf_ratios,
                    profile_csv, read_results_csv, run_matrix)
from .colloc import METHODS
from .mpc import MpcConfig, run_closed_loop
from .nlp import OPTIMAL, SolveOptions, solve
from .ocp import FREE, ModelError
from .problemfile import ProblemFileError, load_problem
from .svg import line_plot
from .transcribe import assemble, default_guess, extract, trajectory_csv

EXIT_OK, EXIT_INPUT, EXIT_SOLVER = 0, 1, 2


class InputError(Exception):
    pass


def _manifest(command: str, inputs, out: Path, **extra) -> dict:
    return {
        "command": command,
        "inputs": [str(p) for p in inputs],
        "output_dir": str(out),
        "version": __version__,
        "timestamp": datetime.now(timezone.utc).isoformat(),
        "seed": os.environ.get("OCPKIT_SEED"),
        **extra,
    }


def _write(out: Path, name: str, text: str):
    (out / name).write_text(text, encoding="utf-8")


def _write_json(out: Path, name: str, data):
    _write(out, name, json.dumps(data, indent=2, sort_keys=True, default=_json_default) + "\n")


def _json_default(v):
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    if isinstance(v, np.ndarray):
        return v.tolist()
    raise TypeError(type(v).__name__)


def _options(args) -> SolveOptions:
    try:
        return SolveOptions(kkt_tol=args.tol, max_iter=args.max_iter, max_time=args.max_time)
    except ValueError as err:
        raise InputError(str(err)) from None


def _load(path):
    try:
        return load_problem(path)
    except OSError as err:
        raise InputError(f"{path}: {err.strerror or err}") from None
    except ProblemFileError as err:
        raise InputError(f"{path}: {err}") from None


def _safe(name: str) -> str:
    return "".join(c if c.isalnum() or c in "-_" else "_" for c in name)


# -- solve -----------------------------------------------------------------


def cmd_solve(args) -> int:
    model = _load(args.problem)
    opts = _options(args)
    if args.method == "lgr":
        grid = {"K": args.intervals or 1, "N": args.N or 10}
    else:
        if args.intervals not in (None, 1):
            raise InputError("--intervals applies to the lgr method only")
        grid = {"N": args.N or 50}
    try:
        nlp, lay = assemble(model, args.method, **grid)
    except (ModelError, ValueError) as err:
        raise InputError(str(err)) from None
    sol = solve(nlp, default_guess(nlp.model, lay), opts)
    traj = extract(sol.z, lay)
    sn, cn = model.names()

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write(out, "trajectory.csv", trajectory_csv(traj, (sn, cn)))
    summary = {
        "status": sol.status,
        "objective": sol.objective,
        "tf": traj.tf,
        "iterations": sol.iterations,
        "solve_time": sol.solve_time,
        "kkt": sol.kkt,
        "n": lay.n,
        "e": lay.e,
        "q": lay.q,
        "message": sol.message,
    }
    _write_json(out, "summary.json", summary)
    _write_json(out, "manifest.json", _manifest("solve", [args.problem], out, method=args.method, grid=grid,
                                                solver_options=vars(opts)))
    for i, name in enumerate(sn):
        _write(out, f"state_{_safe(name)}.svg",
               line_plot([(name, traj.t, traj.X[:, i])], title=name, xlabel="t (s)", ylabel=name))
    for i, name in enumerate(cn):
        _write(out, f"control_{_safe(name)}.svg",
               line_plot([(name, traj.t_u, traj.U[:, i])], title=name, xlabel="t (s)", ylabel=name))
    print(f"{sol.status}: objective {sol.objective:.10g}, tf {traj.tf:.6g}, {sol.iterations} iterations, "
          f"{sol.solve_time:.3f} s")
    return EXIT_OK if sol.status == OPTIMAL else EXIT_SOLVER


# -- mpc -------------------------------------------------------------------


def _read_config(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except OSError as err:
        raise InputError(f"{path}: {err.strerror or err}") from None
    except json.JSONDecodeError as err:
        raise InputError(f"{path}: line {err.lineno}: {err.msg}") from None
    if not isinstance(data, dict):
        raise InputError(f"{path}: expected a JSON object")
    return data


def _resolve(config_path, name) -> Path:
    p = Path(name)
    return p if p.is_absolute() else Path(config_path).parent / p


def _goal(model, tol):
    if tol is None:
        return None
    tol = np.asarray(tol, dtype=float)
    if tol.shape != (model.n_st,):
        raise InputError(f"goal_tol needs {model.n_st} entries")
    target = np.array([0.0 if v is FREE else v for v in model.xf])
    active = np.array([v is not FREE for v in model.xf])

    def goal(x):
        return bool(np.all(np.abs(np.asarray(x) - target)[active] <= tol[active]))

    return goal


def cmd_mpc(args) -> int:
    cfg_data = _read_config(args.config)
    if "problem" not in cfg_data:
        raise InputError(f"{args.config}: missing 'problem'")
    problem_path = _resolve(args.config, cfg_data["problem"])
    model = _load(problem_path)
    known = {"problem", "t_ex", "predict_x0", "max_iterations", "goal_tol", "method", "K", "N"}
    unknown = set(cfg_data) - known
    if unknown:
        raise InputError(f"{args.config}: unknown keys {sorted(unknown)}")
    method = cfg_data.get("method", "lgr")
    if method not in METHODS:
        raise InputError(f"unknown method {method!r}")
    t_ex = float(cfg_data.get("t_ex", model.t_ex))
    max_it = args.max_iterations if args.max_iterations is not None else int(cfg_data.get("max_iterations", 100))
    try:
        cfg = MpcConfig(t_ex=t_ex, predict_x0=bool(cfg_data.get("predict_x0", True)), max_iterations=max_it,
                        goal=_goal(model, cfg_data.get("goal_tol")), method=method, N=cfg_data.get("N", 10),
                        K=cfg_data.get("K", 1), solve_options=_options(args))
    except (TypeError, ValueError) as err:
        raise InputError(str(err)) from None
    log = run_closed_loop(model, cfg)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write(out, "plantlog.csv", log.to_csv())
    _write_json(out, "manifest.json", _manifest("mpc", [args.config, problem_path], out, method=method,
                                                grid=cfg.grid(), t_ex=t_ex, predict_x0=cfg.predict_x0,
                                                max_iterations=max_it, solver_options=vars(cfg.solve_options)))
    sn, _ = model.names()
    if log.steps:
        t = np.array([r.t0 for r in log.steps] + [log.t_end])
        X = np.array([r.x0_actual for r in log.steps] + [log.x_end])
        P = np.array([r.x0_predicted for r in log.steps])
        for i, name in enumerate(sn):
            _write(out, f"state_{_safe(name)}.svg",
                   line_plot([(f"{name} actual", t, X[:, i]), (f"{name} predicted", t[:-1] + t_ex, P[:, i])],
                             title=name, xlabel="t (s)", ylabel=name))
        st = np.array([r.solve_time for r in log.steps])
        _write(out, "solve_time.svg",
               line_plot([("solve time", t[:-1], st), ("t_ex", t[:-1], np.full(len(st), t_ex))],
                         title="solve time", xlabel="t (s)", ylabel="s"))
    status = "failed at step %d" % log.failure.step if log.failure else "ok"
    print(f"{len(log.steps)} steps, final t {log.t_end:.4g}, final state {np.round(log.x_end, 6).tolist()}, {status}")
    return EXIT_SOLVER if log.failure else EXIT_OK


# -- bench -----------------------------------------------------------------


def cmd_bench(args) -> int:
    suite = _read_config(args.suite)
    problem_path = _resolve(args.suite, suite.get("problem", ""))
    model = _load(problem_path)
    solvers = list(suite.get("solvers", DEFAULT_SOLVERS))
    try:
        for sid in solvers:
            parse_solver(sid)
    except ValueError as err:
        raise InputError(str(err)) from None
    if args.full:
        p_min, p_max, reps = 2, 102, 3
    else:
        p_min, p_max = int(suite.get("p_min", 2)), int(suite.get("p_max", 32))
        reps = int(suite.get("reps", 2))
    if args.p_max is not None:
        p_max = args.p_max
    if args.reps is not None:
        reps = args.reps
    if p_min < 2 or p_max < p_min or reps < 1:
        raise InputError("need 2 <= p_min <= p_max and reps >= 1")
    obstacle = None
    if suite.get("obstacle") is not None:
        o = suite["obstacle"]
        try:
            obstacle = Obstacle(tuple(o["center"]), tuple(o["axes"]), float(o["margin"]))
        except (KeyError, TypeError, ValueError) as err:
            raise InputError(f"bad obstacle: {err}") from None
    opts = SolveOptions(max_time=float(suite.get("max_time", 300.0)))
    threads = args.parallel if args.parallel else 1

    def progress(r):
        if not args.quiet:
            print(f"{r.solver:>10} p={r.p:<4d} rep={r.rep} {r.solve_time:8.3f} s {r.status}"
                  f"{' collision' if r.collision else ''}", flush=True)

    frozen = model.freeze()
    result = run_matrix(lambda: frozen, solvers, range(p_min, p_max + 1), reps, opts=opts, obstacle=obstacle,
                        threads=threads, progress=progress)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write(out, "results.csv", result.to_csv())
    _write_json(out, "manifest.json", _manifest("bench", [args.suite, problem_path], out, solvers=solvers,
                                                fidelities=[p_min, p_max], reps=reps, threads=threads,
                                                obstacle=suite.get("obstacle"), solver_options=vars(opts)))
    solved = int(np.sum(~result.failed()))
    print(f"{solved}/{result.times.size} cells solved without collision")
    return EXIT_OK


# -- profile ---------------------------------------------------------------


def _window(text):
    try:
        a, b = (float(v) for v in text.split(":"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"window must look like LO:HI, got {text!r}") from None
    if not 1 <= a < b:
        raise argparse.ArgumentTypeError("window needs 1 <= LO < HI")
    return a, b


def cmd_profile(args) -> int:
    records = []
    for path in args.results:
        try:
            text = Path(path).read_text(encoding="utf-8")
            records += read_results_csv(text).records
        except OSError as err:
            raise InputError(f"{path}: {err.strerror or err}") from None
        except (KeyError, ValueError) as err:
            raise InputError(f"{path}: malformed results file ({err})") from None
    if not records:
        raise InputError("no benchmark records found")
    result = BenchmarkResult.from_records(records)
    ratios = perf_ratios(result)
    grid = np.unique(np.concatenate([[1.0], ratios.ravel()]))
    prof = perf_profile(ratios, grid)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write(out, "profile.csv", profile_csv(result.solvers, grid, prof))
    windows = args.window or [(1.0, float(max(2.0, np.max(ratios[ratios < 1e6], initial=2.0))))]
    for k, (a, b) in enumerate(windows):
        g = np.unique(np.concatenate([[a, b], grid[(grid >= a) & (grid <= b)]]))
        pw = perf_profile(ratios, g)
        series = [(s, g, pw[i]) for i, s in enumerate(result.solvers)]
        _write(out, f"profile_{k + 1}.svg", line_plot(series, title=f"performance profile, gamma in [{a:g}, {b:g}]",
                                                      xlabel="gamma", ylabel="P(r <= gamma)", xlim=(a, b),
                                                      ylim=(0.0, 1.0), step=True))
    _write_json(out, "manifest.json", _manifest("profile", args.results, out, windows=windows,
                                                solvers=result.solvers))
    print(f"profiles for {len(result.solvers)} solvers over {len(result.fidelities)} problems")
    return EXIT_OK


# -- entry point -------------------------------------------------------------


def _add_solver_options(p):
    p.add_argument("--tol", type=float, default=1e-6, help="KKT tolerance")
    p.add_argument("--max-iter", type=int, default=500)
    p.add_argument("--max-time", type=float, default=300.0, help="seconds")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ocpkit", description="Direct-collocation optimal control toolkit")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", help="solve one problem file")
    p.add_argument("problem")
    p.add_argument("--method", choices=METHODS, default="lgr")
    p.add_argument("--N", type=int, default=None, help="grid points (h-methods) or nodes per interval (lgr)")
    p.add_argument("--intervals", type=int, default=None, help="number of lgr intervals")
    p.add_argument("--out", default="out")
    _add_solver_options(p)
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("mpc", help="run a closed-loop simulation from a JSON config")
    p.add_argument("config")
    p.add_argument("--out", default="out")
    p.add_argument("--max-iterations", type=int, default=None)
    _add_solver_options(p)
    p.set_defaults(func=cmd_mpc)

    p = sub.add_parser("bench", help="run the benchmark matrix from a JSON suite")
    p.add_argument("suite")
    p.add_argument("--out", default="out")
    p.add_argument("--parallel", type=int, nargs="?", const=os.cpu_count() or 1, default=0,
                   help="worker threads (default: all cores when given without a value)")
    p.add_argument("--full", action="store_true", help="p = 2..102 with 3 repetitions")
    p.add_argument("--p-max", type=int, default=None)
    p.add_argument("--reps", type=int, default=None)
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("profile", help="performance profiles from results CSV files")
    p.add_argument("results", nargs="+")
    p.add_argument("--out", default="out")
    p.add_argument("--window", type=_window, action="append", help="gamma range LO:HI, repeatable")
    p.set_defaults(func=cmd_profile)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code else EXIT_OK
    try:
        return args.func(args)
    except InputError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
