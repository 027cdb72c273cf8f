"""Solver-by-fidelity benchmark matrix and performance profiles."""

from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .nlp import OPTIMAL, SolveOptions, solve
from .ocp import OcpModel
from .problems import OBSTACLE_AXES, OBSTACLE_CENTER, OBSTACLE_MARGIN
from .transcribe import Trajectory, assemble, default_guess, extract, interpolate

R_M = 1e6
FAILED = math.nan
DEFAULT_SOLVERS = ("euler", "trapezoid", "lgr-1", "lgr-2", "lgr-4")


class MissingStates(ValueError):
    pass


@dataclass(frozen=True)
class Obstacle:
    center: tuple = OBSTACLE_CENTER
    axes: tuple = OBSTACLE_AXES
    margin: float = OBSTACLE_MARGIN

    def __post_init__(self):
        if min(self.axes) <= 0 or self.margin <= 0:
            raise ValueError("obstacle semi-axes and margin must be positive")

    def value(self, x, y):
        """Scaled ellipse value; ``<= 1`` means inside the inflated obstacle."""
        a = self.axes[0] + self.margin
        b = self.axes[1] + self.margin
        return ((np.asarray(x) - self.center[0]) / a) ** 2 + ((np.asarray(y) - self.center[1]) / b) ** 2


def collision_check(traj: Trajectory, obs: Obstacle | None = None, samples: int = 200, xy=(0, 1)) -> bool:
    """True if any of ``samples`` uniformly timed positions touches the inflated obstacle."""
    obs = obs or Obstacle()
    if traj.X.ndim != 2 or traj.n_st <= max(xy):
        raise MissingStates(f"trajectory has {traj.X.shape[-1]} states, needs index {max(xy)}")
    ts = np.linspace(traj.t_start, traj.tf, samples)
    pts = np.array([interpolate(traj, t)[0] for t in ts])
    return bool(np.any(obs.value(pts[:, xy[0]], pts[:, xy[1]]) <= 1.0))


def parse_solver(sid: str) -> tuple[str, int]:
    """``euler``/``trapezoid`` or ``lgr-K`` to (method, interval count)."""
    if sid in ("euler", "trapezoid"):
        return sid, 1
    if sid.startswith("lgr-"):
        k = int(sid[4:])
        if k < 1:
            raise ValueError(f"bad interval count in {sid!r}")
        return "lgr", k
    raise ValueError(f"unknown solver id {sid!r}")


def grid_for(sid: str, p: int) -> dict:
    method, k = parse_solver(sid)
    if method == "lgr":
        return {"K": k, "N": p}
    return {"N": p}


@dataclass
class RunRecord:
    solver: str
    p: int
    rep: int
    solve_time: float
    status: str
    collision: bool
    trajectory: Trajectory | None = field(default=None, repr=False)


@dataclass
class BenchmarkResult:
    solvers: list
    fidelities: list
    times: np.ndarray
    status: np.ndarray
    records: list = field(default_factory=list)

    def failed(self) -> np.ndarray:
        return np.isnan(self.times)

    def to_csv(self) -> str:
        lines = ["solver,p,rep,solve_time,status,collision"]
        for r in self.records:
            lines.append(f"{r.solver},{r.p},{r.rep},{r.solve_time!r},{r.status},{int(r.collision)}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_records(cls, records, solvers=None, fidelities=None) -> "BenchmarkResult":
        solvers = list(solvers or dict.fromkeys(r.solver for r in records))
        fidelities = list(fidelities or sorted({r.p for r in records}))
        times = np.full((len(solvers), len(fidelities)), FAILED)
        status = np.full((len(solvers), len(fidelities)), "Failed", dtype=object)
        si = {s: i for i, s in enumerate(solvers)}
        pj = {p: j for j, p in enumerate(fidelities)}
        cells: dict = {}
        for r in records:
            cells.setdefault((si[r.solver], pj[r.p]), []).append(r)
        for (i, j), rs in cells.items():
            bad = [r for r in rs if r.status != OPTIMAL or r.collision]
            if bad:
                status[i, j] = "Collision" if all(r.status == OPTIMAL for r in bad) else bad[0].status
            else:
                times[i, j] = float(np.mean([r.solve_time for r in rs]))
                status[i, j] = OPTIMAL
        return cls(solvers, fidelities, times, status, list(records))


def read_results_csv(text: str) -> BenchmarkResult:
    import csv
    import io

    records = []
    for row in csv.DictReader(io.StringIO(text)):
        records.append(RunRecord(row["solver"], int(row["p"]), int(row["rep"]), float(row["solve_time"]),
                                 row["status"], row["collision"].strip() in ("1", "True", "true")))
    return BenchmarkResult.from_records(records)


def run_cell(problem: Callable[[], OcpModel], sid: str, p: int, rep: int, opts: SolveOptions | None = None,
             obstacle: Obstacle | None = None, keep_trajectory: bool = False) -> RunRecord:
    method, _ = parse_solver(sid)
    nlp, lay = assemble(problem(), method, **grid_for(sid, p))
    z0 = default_guess(nlp.model, lay)
    # only the NLP solve is timed
    t = time.perf_counter()
    sol = solve(nlp, z0, opts)
    elapsed = time.perf_counter() - t
    traj = extract(sol.z, lay)
    hit = collision_check(traj, obstacle) if obstacle is not None else False
    return RunRecord(sid, p, rep, elapsed, sol.status, hit, traj if keep_trajectory else None)


def run_matrix(problem: Callable[[], OcpModel], solvers=DEFAULT_SOLVERS, fidelities=range(2, 33), reps: int = 2,
               opts: SolveOptions | None = None, obstacle: Obstacle | None = Obstacle(), threads: int = 1,
               keep_trajectories: bool = False, progress: Callable | None = None) -> BenchmarkResult:
    """Time every (solver, p) cell ``reps`` times.

    A cell fails if any repetition is not Optimal or collides with
    ``obstacle`` (pass ``None`` to skip the check).
    """
    solvers, fidelities = list(solvers), list(fidelities)
    for sid in solvers:
        parse_solver(sid)
    jobs = [(sid, p, rep) for sid in solvers for p in fidelities for rep in range(reps)]

    def work(job):
        rec = run_cell(problem, *job, opts=opts, obstacle=obstacle, keep_trajectory=keep_trajectories)
        if progress is not None:
            progress(rec)
        return rec

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            records = list(pool.map(work, jobs))
    else:
        records = [work(j) for j in jobs]
    return BenchmarkResult.from_records(records, solvers, fidelities)


def perf_ratios(result: BenchmarkResult | np.ndarray, r_m: float = R_M) -> np.ndarray:
    """``t[s, p] / min_s t[s, p]``; failed cells get ``r_m``."""
    t = result.times if isinstance(result, BenchmarkResult) else np.asarray(result, dtype=float)
    r = np.full(t.shape, float(r_m))
    for j in range(t.shape[1]):
        col = t[:, j]
        ok = ~np.isnan(col)
        if ok.any():
            r[ok, j] = col[ok] / np.min(col[ok])
    return r


def perf_profile(ratios, gamma_grid, r_m: float = R_M) -> np.ndarray:
    """``P[s, g]``: fraction of problems with ``r[s, p] <= gamma_grid[g]``.

    Cells carrying ``r_m`` are failures and never count, so the profile
    tops out at each solver's solve fraction.
    """
    r = np.asarray(ratios, dtype=float)
    r = np.where(r >= r_m, np.inf, r)
    g = np.asarray(gamma_grid, dtype=float)
    if g.ndim != 1 or np.any(np.diff(g) < 0):
        raise ValueError("gamma grid must be ascending")
    if np.any(g < 1):
        raise ValueError("gamma values must be at least 1")
    return (r[:, :, None] <= g[None, None, :]).sum(axis=1) / r.shape[1]


def profile_csv(solvers, gamma_grid, profile) -> str:
    lines = [",".join(["gamma"] + [f"P_{s}" for s in solvers])]
    for k, g in enumerate(gamma_grid):
        lines.append(",".join([repr(float(g))] + [repr(float(v)) for v in profile[:, k]]))
    return "\n".join(lines) + "\n"
