"""Reference problems with known or published solutions."""

from __future__ import annotations

import math

import numpy as np

from .ocp import FREE, OcpModel, define

# kinematic bicycle geometry and scenario
LA, LB = 1.58, 1.72
GOAL = (0.0, 100.0)
OBSTACLE_CENTER = (0.0, 50.0)
OBSTACLE_AXES = (5.0, 5.0)
OBSTACLE_MARGIN = 2.5

BRYSON_LIMIT = 1.0 / 12.0


def bryson_denham_cost(limit: float = BRYSON_LIMIT) -> float:
    """Optimal cost of the Bryson-Denham problem when the state limit is active (limit <= 1/6)."""
    return 4.0 / (9.0 * limit)


def bryson_denham(limit: float = BRYSON_LIMIT, tf: float | None = 1.0) -> OcpModel:
    """Double integrator reversing its velocity over [0, 1] with a position ceiling.

    ``tf=None`` makes the final time a design variable bounded by [0.001, 1].
    """
    m = define(2, 1, x0=[0.0, 1.0], xf=[0.0, -1.0], x_min=[0.0, FREE], x_max=[limit, FREE])
    m.set_dynamics(["x2", "u1"])
    m.add_lagrange("0.5*u1^2")
    if tf is None:
        m.configure(final_time_is_dv=True, tf_min=0.001, tf_max=1.0)
    else:
        m.configure(tf=tf)
    return m


def moon_lander_solution(g: float = 1.5, amax: float = 3.0, h0: float = 10.0, v0: float = -2.0) -> dict:
    """Free-fall then full-thrust landing: switch time, final time and fuel use."""
    # free fall for t1, then full thrust for t2 = -v1 / k; the remaining height
    # h1 must equal v1^2 / (2 k), which is a quadratic in t1
    k = amax - g
    a = 0.5 * g + 0.5 * g * g / k
    b = -v0 - v0 * g / k
    c = -h0 + 0.5 * v0 * v0 / k
    t1 = (-b + math.sqrt(b * b - 4.0 * a * c)) / (2.0 * a)
    v1 = v0 - g * t1
    t2 = -v1 / k
    return {"t1": t1, "t2": t2, "tf": t1 + t2, "cost": amax * t2}


def moon_lander_profile(t, g: float = 1.5, amax: float = 3.0, h0: float = 10.0, v0: float = -2.0) -> tuple:
    """Height and speed of the optimal landing at time(s) ``t``; held after touchdown."""
    sol = moon_lander_solution(g, amax, h0, v0)
    t = np.clip(np.asarray(t, dtype=float), 0.0, sol["tf"])
    t1 = sol["t1"]
    tb = np.minimum(t, t1)
    h = h0 + v0 * tb - 0.5 * g * tb * tb
    v = v0 - g * tb
    ta = np.maximum(t - t1, 0.0)
    k = amax - g
    h = h + v * ta + 0.5 * k * ta * ta
    v = v + k * ta
    return h, v


def moon_lander(tf_max: float = 400.0) -> OcpModel:
    """Minimum-fuel vertical landing from 10 m at -2 m/s under gravity 1.5."""
    m = define(2, 1, x0=[10.0, -2.0], xf=[0.0, 0.0], x_min=[0.0, -20.0], x_max=[20.0, 20.0], u_min=[0.0],
               u_max=[3.0])
    m.set_dynamics(["x2", "u1 - 1.5"])
    m.add_lagrange("u1")
    m.configure(final_time_is_dv=True, tf_min=0.001, tf_max=tf_max)
    return m


def moon_lander_mpc() -> OcpModel:
    """Moon lander with endpoint tolerances and weighted slacks for closed-loop use."""
    m = moon_lander()
    m.set_tolerances(x0_tol=[0.01, 0.005], xf_tol=[0.01, 0.005])
    m.enable_slack(True, True, w_s0=100.0, w_sf=100.0)
    return m


def bicycle_dynamics() -> list[str]:
    beta = f"atan({LA}*tan(u1)/{LA + LB})"
    return [
        f"x4*cos(x3 + {beta})",
        f"x4*sin(x3 + {beta})",
        f"x4*sin({beta})/{LB}",
        "u2",
    ]


def obstacle_expr() -> str:
    """Path row ``expr <= 0`` keeping (x, y) outside the inflated ellipse."""
    xo, yo = OBSTACLE_CENTER
    ra = OBSTACLE_AXES[0] + OBSTACLE_MARGIN
    rb = OBSTACLE_AXES[1] + OBSTACLE_MARGIN
    return f"1 - ((x1 - {xo})/{ra})^2 - ((x2 - {yo})/{rb})^2"


def kinematic_bicycle() -> OcpModel:
    """Minimum-time drive to (0, 100) around an elliptical obstacle.

    States: x, y, yaw, longitudinal speed.  Controls: steering angle,
    longitudinal acceleration.
    """
    m = define(
        4,
        2,
        x0=[0.0, 0.0, math.pi / 2, 15.0],
        xf=[FREE, FREE, FREE, FREE],
        x_min=[-100.0, -0.01, -2 * math.pi, 5.0],
        x_max=[100.0, 120.0, 2 * math.pi, 29.0],
        u_min=[-math.pi / 6, -2.0],
        u_max=[math.pi / 6, 2.0],
    )
    m.state_names = ["x", "y", "psi", "ux"]
    m.control_names = ["sa", "ax"]
    m.set_dynamics(bicycle_dynamics())
    m.set_mayer(f"(x1_f - {GOAL[0]})^2 + (x2_f - {GOAL[1]})^2 + tf")
    m.add_path_constraint(obstacle_expr())
    m.configure(final_time_is_dv=True, tf_min=0.001, tf_max=50.0)
    # the straight-line guess passes through the obstacle; bias it to one side
    m.set_guess(tf=5.0, xf=[20.0, GOAL[1], math.pi / 2, 25.0])
    return m


PROBLEMS = {
    "bryson_denham": bryson_denham,
    "moon_lander": moon_lander,
    "moon_lander_mpc": moon_lander_mpc,
    "kinematic_bicycle": kinematic_bicycle,
}
