"""Receding-horizon control of a simulated plant.

Each step works on a fixed cadence ``t_ex``.  While the controller solves the
problem for the window starting at ``t_k + t_ex``, the plant keeps running on
the previously computed controls over ``[t_k, t_k + t_ex]``; the initial state
of the new problem is either the current plant state or its prediction at
``t_k + t_ex``.
"""

from __future__ import annotations

import math
import time
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import expr as ex
from .nlp import OPTIMAL, SolveOptions, solve
from .ocp import FREE, OcpModel
from .transcribe import Trajectory, assemble, default_guess, extract, guess_from_trajectory

Dynamics = Callable[[float, np.ndarray, np.ndarray], np.ndarray]


class SolverFailed(RuntimeError):
    def __init__(self, step: int, status: str):
        super().__init__(f"solve at step {step} ended with status {status}")
        self.step = step
        self.status = status


def model_dynamics(model: OcpModel) -> Dynamics:
    """Numeric right-hand side ``F(t, x, u)`` of a model's dynamics."""
    exprs = list(model.dynamics)

    def F(t, x, u):
        values = {}
        for i, v in enumerate(x):
            values[ex.Var(ex.STATE, i)] = float(v)
        for i, v in enumerate(u):
            values[ex.Var(ex.CONTROL, i)] = float(v)
        values[ex.T] = float(t)
        return np.array([float(ex.evaluate(e, values)) for e in exprs])

    return F


def _control_at(t_u, U, t):
    if U.shape[1] == 0:
        return np.zeros(0)
    # np.interp holds the end values outside the samples
    return np.array([np.interp(t, t_u, U[:, i]) for i in range(U.shape[1])])


def simulate_plant(F: Dynamics, x0, t_u, U, t0: float, tf: float, max_step: float = 0.01) -> np.ndarray:
    """Classical RK4 over ``[t0, tf]`` with linearly interpolated controls.

    Uses at least 20 equal steps, none longer than ``max_step``.
    """
    if not tf > t0:
        raise ValueError("simulation needs tf > t0")
    t_u = np.asarray(t_u, dtype=float)
    U = np.asarray(U, dtype=float).reshape(len(t_u), -1)
    steps = max(20, math.ceil((tf - t0) / max_step))
    h = (tf - t0) / steps
    x = np.array(x0, dtype=float)
    for k in range(steps):
        t = t0 + k * h
        u0 = _control_at(t_u, U, t)
        um = _control_at(t_u, U, t + 0.5 * h)
        u1 = _control_at(t_u, U, t + h)
        k1 = F(t, x, u0)
        k2 = F(t + 0.5 * h, x + 0.5 * h * k1, um)
        k3 = F(t + 0.5 * h, x + 0.5 * h * k2, um)
        k4 = F(t + h, x + h * k3, u1)
        x = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return x


def predict_x0(F: Dynamics, x_now, last: Trajectory | None, t_now: float, t_ex: float) -> np.ndarray:
    """Plant state after ``t_ex`` under the tail of the last solved controls."""
    x_now = np.array(x_now, dtype=float)
    if t_ex == 0 or last is None:
        return x_now
    return simulate_plant(F, x_now, last.t_u, last.U, t_now, t_now + t_ex)


@dataclass
class MpcConfig:
    t_ex: float = 0.2
    predict_x0: bool = True
    max_iterations: int = 200
    goal: Callable[[np.ndarray], bool] | None = None
    method: str = "lgr"
    N: int | None = 10
    K: int | None = 4
    solve_options: SolveOptions = field(default_factory=SolveOptions)

    def __post_init__(self):
        if self.t_ex < 0:
            raise ValueError("t_ex must be nonnegative")
        if self.max_iterations < 0:
            raise ValueError("max_iterations must be nonnegative")

    def grid(self) -> dict:
        if self.method == "lgr":
            return {"K": self.K or 1, "N": self.N}
        return {"N": self.N}


@dataclass
class StepRecord:
    step: int
    t0: float
    x0_actual: np.ndarray
    x0_predicted: np.ndarray
    solve_time: float
    status: str
    iterations: int
    t_u: np.ndarray
    U: np.ndarray
    tf: float


@dataclass
class PlantLog:
    n_st: int
    steps: list = field(default_factory=list)
    t_end: float = 0.0
    x_end: np.ndarray | None = None
    # applied control windows (start, stop) in plant time
    segments: list = field(default_factory=list)
    failure: SolverFailed | None = None
    warnings: list = field(default_factory=list)
    first_solution: Trajectory | None = None
    warm_iterations: int = 0

    def to_csv(self) -> str:
        n = self.n_st
        head = ["step", "t0", "solve_time", "status"]
        head += [f"x{i + 1}" for i in range(n)] + [f"x{i + 1}p" for i in range(n)]
        lines = [",".join(head)]
        for r in self.steps:
            row = [str(r.step), repr(float(r.t0)), repr(float(r.solve_time)), r.status]
            row += [repr(float(v)) for v in r.x0_actual] + [repr(float(v)) for v in r.x0_predicted]
            lines.append(",".join(row))
        return "\n".join(lines) + "\n"


def lander_goal(x) -> bool:
    """Landed: height and speed both within 0.1."""
    return abs(x[0]) <= 0.1 and abs(x[1]) <= 0.1


def _step_model(base: OcpModel, x0, t0: float, t_ex: float) -> OcpModel:
    m = base.copy()
    # keep the imposed state inside the state box so the model stays valid
    x0 = np.clip(np.asarray(x0, dtype=float), m.x_min, m.x_max)
    m.x0 = [float(v) for v in x0]
    start = t0 + t_ex
    if m.final_time_is_dv:
        m.configure(t0=t0, t_ex=t_ex, tf_min=start + base.tf_min, tf_max=start + base.tf_max)
    else:
        m.configure(t0=t0, t_ex=t_ex, tf=start + (base.tf_fixed - base.t0 - base.t_ex))
    return m.freeze()


def warm_start(model: OcpModel, cfg: MpcConfig):
    """Off-line solve from the default guess; returns ``(solution, trajectory, layout)``.

    A failed solve still returns its best iterate and issues a warning so the
    caller can fall back to default guesses.
    """
    m = _step_model(model, [v if v is not FREE else 0.0 for v in model.x0], model.t0, 0.0)
    nlp, lay = assemble(m, cfg.method, **cfg.grid())
    sol = solve(nlp, default_guess(nlp.model, lay), cfg.solve_options)
    if sol.status != OPTIMAL:
        warnings.warn(f"warm start ended with status {sol.status}", RuntimeWarning, stacklevel=2)
    return sol, extract(sol.z, lay), lay


def shifted_guess(prev: Trajectory | None, model: OcpModel, lay) -> np.ndarray:
    """Previous solution shifted onto the new window, holding its end values."""
    if prev is None:
        return default_guess(model, lay)
    tf = prev.tf
    if model.final_time_is_dv:
        lo, hi = model.tf_bounds()
        tf = min(max(tf, lo), hi)
    return guess_from_trajectory(prev, lay, tf)


def run_closed_loop(model: OcpModel, cfg: MpcConfig, plant: Dynamics | None = None, x_start=None) -> PlantLog:
    """Drive the plant from ``x_start`` (default: the model's ``x0``) until the goal holds."""
    plant = plant or model_dynamics(model)
    goal = cfg.goal or (lambda x: False)
    x = np.array(x_start if x_start is not None else [v if v is not FREE else 0.0 for v in model.x0], dtype=float)
    t = float(model.t0)
    log = PlantLog(model.n_st, t_end=t, x_end=x.copy())
    if goal(x) or cfg.max_iterations == 0:
        return log

    sol, active, _ = warm_start(model, cfg)
    log.warm_iterations = sol.iterations
    log.first_solution = active
    if sol.status != OPTIMAL:
        log.warnings.append(f"warm start status {sol.status}; using default guesses")
        active_guess = None
    else:
        active_guess = active

    for step in range(cfg.max_iterations):
        x_pred = predict_x0(plant, x, active, t, cfg.t_ex) if cfg.predict_x0 else x.copy()
        m = _step_model(model, x_pred, t, cfg.t_ex)
        nlp, lay = assemble(m, cfg.method, **cfg.grid())
        z0 = shifted_guess(active_guess, m, lay)
        t_solve = time.perf_counter()
        s = solve(nlp, z0, cfg.solve_options)
        elapsed = time.perf_counter() - t_solve
        traj = extract(s.z, lay)
        log.steps.append(StepRecord(step, t, x.copy(), x_pred, elapsed, s.status, s.iterations, traj.t_u, traj.U,
                                    traj.tf))
        if s.status != OPTIMAL:
            log.failure = SolverFailed(step, s.status)
            break

        # the plant runs on the previous controls while this solve is in flight
        if cfg.t_ex > 0:
            x = simulate_plant(plant, x, active.t_u, active.U, t, t + cfg.t_ex)
            log.segments.append((t, t + cfg.t_ex))
            t = t + cfg.t_ex
        active = active_guess = traj
        if traj.tf - t < cfg.t_ex or cfg.t_ex == 0:
            # end game: the new solution ends inside the next window
            if traj.tf > t:
                x = simulate_plant(plant, x, traj.t_u, traj.U, t, traj.tf)
                log.segments.append((t, traj.tf))
                t = traj.tf
            break
        if goal(x):
            break

    log.t_end = t
    log.x_end = x.copy()
    return log
