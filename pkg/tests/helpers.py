"""Shared fixtures for the test suite."""

import os

import numpy as np

import ocpkit.expr as ex


def seed(default: int = 0) -> int:
    return int(os.environ.get("OCPKIT_SEED", default))


def rng(offset: int = 0) -> np.random.Generator:
    return np.random.default_rng(seed() + offset)


# operators that stay finite and smooth for arguments in [-2, 2]
_SAFE_UNARY = ("neg", "sin", "cos", "tanh", "atan", "exp_small", "sqrt_pos", "log_pos")


def random_expr(r: np.random.Generator, n_st: int, n_ctr: int, depth: int = 6) -> ex.Expr:
    """Random smooth expression over x1..x{n_st}, u1..u{n_ctr} and t."""
    if depth <= 1 or r.random() < 0.2:
        k = r.integers(0, n_st + n_ctr + 2)
        if k < n_st:
            return ex.state(int(k))
        if k < n_st + n_ctr:
            return ex.control(int(k - n_st))
        if k == n_st + n_ctr:
            return ex.T
        return ex.Const(float(np.round(r.uniform(-2, 2), 3)))
    if r.random() < 0.35:
        op = _SAFE_UNARY[r.integers(0, len(_SAFE_UNARY))]
        a = random_expr(r, n_st, n_ctr, depth - 1)
        if op == "exp_small":
            return ex.Unary("exp", ex.Unary("sin", a))
        if op == "sqrt_pos":
            return ex.Unary("sqrt", ex.Binary("add", ex.Const(1.0), ex.Binary("pow", a, ex.Const(2.0))))
        if op == "log_pos":
            return ex.Unary("log", ex.Binary("add", ex.Const(2.0), ex.Unary("cos", a)))
        return ex.Unary(op, a)
    op = ("add", "sub", "mul", "div", "pow")[r.integers(0, 5)]
    a = random_expr(r, n_st, n_ctr, depth - 1)
    b = random_expr(r, n_st, n_ctr, depth - 1)
    if op == "div":
        # denominator bounded away from zero
        return ex.Binary("div", a, ex.Binary("add", ex.Const(3.0), ex.Unary("sin", b)))
    if op == "pow":
        return ex.Binary("pow", ex.Unary("tanh", a), ex.Const(float(r.integers(2, 4))))
    return ex.Binary(op, a, b)


def random_env(r: np.random.Generator, n_st: int, n_ctr: int) -> ex.EvalEnv:
    return ex.EvalEnv(x=r.uniform(-2, 2, n_st), u=r.uniform(-2, 2, n_ctr), t=float(r.uniform(-2, 2)))


def with_value(env: ex.EvalEnv, var: ex.Var, value: float) -> ex.EvalEnv:
    x, u, t = list(env.x), list(env.u), env.t
    if var.kind == ex.STATE:
        x[var.index] = value
    elif var.kind == ex.CONTROL:
        u[var.index] = value
    else:
        t = value
    return ex.EvalEnv(x=x, u=u, t=t, tf=env.tf)


def env_value(env: ex.EvalEnv, var: ex.Var) -> float:
    return env.lookup(var)


def fd_gradient(e: ex.Expr, env: ex.EvalEnv, variables, step: float = 1e-6) -> np.ndarray:
    out = np.zeros(len(variables))
    for i, v in enumerate(variables):
        x0 = env_value(env, v)
        fp = ex.eval(e, with_value(env, v, x0 + step))
        fm = ex.eval(e, with_value(env, v, x0 - step))
        out[i] = (fp - fm) / (2 * step)
    return out


def fd_hessian(e: ex.Expr, env: ex.EvalEnv, variables, step: float = 1e-4) -> np.ndarray:
    """Central differences of the analytic gradient."""
    n = len(variables)
    H = np.zeros((n, n))
    for j, v in enumerate(variables):
        x0 = env_value(env, v)
        gp = ex.grad(e, with_value(env, v, x0 + step))[:n]
        gm = ex.grad(e, with_value(env, v, x0 - step))[:n]
        H[:, j] = (gp - gm) / (2 * step)
    return H


def hessian_matrix(e: ex.Expr, env: ex.EvalEnv, variables) -> np.ndarray:
    idx = {v: i for i, v in enumerate(variables)}
    H = np.zeros((len(variables), len(variables)))
    for (v, w), val in ex.hessian(e, env).items():
        H[idx[v], idx[w]] = val
    return H


def relative_error(a, b, floor: float = 1e-8) -> float:
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    scale = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    mask = np.maximum(np.abs(a), np.abs(b)) > floor
    if not mask.any():
        return float(np.max(np.abs(a - b), initial=0.0))
    return float(np.max(np.abs(a - b)[mask] / scale[mask]))


def mp_eval(e: ex.Expr, values: dict, dps: int = 40):
    """Evaluate ``e`` in extended precision (an oracle independent of the package evaluator)."""
    import mpmath

    with mpmath.workdps(dps):
        return _mp(e, values, mpmath)


def _mp(e, values, mp):
    if isinstance(e, ex.Const):
        return mp.mpf(e.value)
    if isinstance(e, ex.Var):
        return mp.mpf(values[e])
    if isinstance(e, ex.Unary):
        a = _mp(e.child, values, mp)
        return {
            "neg": lambda: -a,
            "sin": lambda: mp.sin(a),
            "cos": lambda: mp.cos(a),
            "tan": lambda: mp.tan(a),
            "atan": lambda: mp.atan(a),
            "sqrt": lambda: mp.sqrt(a),
            "exp": lambda: mp.exp(a),
            "log": lambda: mp.log(a),
            "abs": lambda: abs(a),
            "tanh": lambda: mp.tanh(a),
            "sign": lambda: mp.sign(a),
        }[e.op]()
    a = _mp(e.left, values, mp)
    b = _mp(e.right, values, mp)
    if e.op == "add":
        return a + b
    if e.op == "sub":
        return a - b
    if e.op == "mul":
        return a * b
    if e.op == "div":
        return a / b
    return a ** b


def mp_fd_gradient(e: ex.Expr, env: ex.EvalEnv, variables, step: float = 1e-6, dps: int = 40) -> np.ndarray:
    """Central differences with step ``step`` evaluated in ``dps``-digit arithmetic."""
    import mpmath

    base = {v: env_value(env, v) for v in variables}
    out = np.zeros(len(variables))
    with mpmath.workdps(dps):
        h = mpmath.mpf(step)
        for i, v in enumerate(variables):
            plus, minus = dict(base), dict(base)
            plus[v] = mpmath.mpf(base[v]) + h
            minus[v] = mpmath.mpf(base[v]) - h
            out[i] = float((_mp(e, plus, mpmath) - _mp(e, minus, mpmath)) / (2 * h))
    return out


def mp_fd_hessian(e: ex.Expr, env: ex.EvalEnv, variables, step: float = 1e-4, dps: int = 40) -> np.ndarray:
    """Central second differences of ``e`` in extended precision."""
    import mpmath

    base = {v: env_value(env, v) for v in variables}
    n = len(variables)
    H = np.zeros((n, n))
    with mpmath.workdps(dps):
        h = mpmath.mpf(step)

        def f(shift):
            vals = {v: mpmath.mpf(base[v]) + shift.get(v, 0) for v in variables}
            return _mp(e, vals, mpmath)

        for i, vi in enumerate(variables):
            for j, vj in enumerate(variables[: i + 1]):
                if i == j:
                    val = (f({vi: h}) - 2 * f({}) + f({vi: -h})) / (h * h)
                else:
                    val = (f({vi: h, vj: h}) - f({vi: h, vj: -h}) - f({vi: -h, vj: h}) + f({vi: -h, vj: -h})) / (
                        4 * h * h)
                H[i, j] = H[j, i] = float(val)
    return H
