"""Dense primal-dual interior-point solver.

The method follows the usual barrier scheme: inequalities ``g(z) <= 0`` get
slacks ``s >= 0`` so that all general constraints read ``c(x) = 0`` with
``x = (z, s)``; bounds are handled by a log barrier whose parameter ``mu`` is
reduced monotonically once the barrier subproblem is solved to ``10 * mu``.
Each iteration solves the primal-dual Newton system

    [ W + Sigma + dw I    J^T  ] [dx]     [ grad phi_mu + J^T y ]
    [ J                 -dc I  ] [dy] = - [ c                   ]

with a dense Bunch-Kaufman factorization whose inertia drives the Hessian
shift ``dw``.  Steps obey a fraction-to-boundary rule and are accepted by
Armijo backtracking on the l1 merit function ``phi_mu + nu * |c|_1``, with
second-order corrections tried after a rejected full step.  A proximal floor
on ``dw`` rises after heavily cut steps and decays after long ones.

Variables with ``lb == ub`` are removed before iterating.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Protocol

import numpy as np
from scipy.linalg import lapack
from scipy.sparse import coo_matrix

from ..expr import DomainError
from .problem import NlpProblem

OPTIMAL = "Optimal"
ITER_LIMIT = "IterLimit"
TIME_LIMIT = "TimeLimit"
INFEASIBLE = "Infeasible"
STATUSES = (OPTIMAL, ITER_LIMIT, TIME_LIMIT, INFEASIBLE)

TAU = 0.995
KAPPA_EPS = 10.0
THETA_MU = 1.5
KAPPA_SIGMA = 1e10
KAPPA_D = 1e-5
ARMIJO = 1e-4
PUSH = 1e-2
S_MAX = 100.0
SCALE_MAX_GRAD = 100.0
PROX_MIN = 1e-2
PROX_DECAY = 2.0


class EvaluatorError(RuntimeError):
    pass


@dataclass(frozen=True)
class SolveOptions:
    kkt_tol: float = 1e-6
    max_iter: int = 500
    max_time: float = 300.0
    mu_init: float = 0.1
    mu_shrink: float = 0.2
    scaling: bool = True

    def __post_init__(self):
        for name in ("kkt_tol", "max_iter", "max_time", "mu_init", "mu_shrink"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not self.mu_shrink < 1:
            raise ValueError("mu_shrink must be below 1")


@dataclass(frozen=True)
class Solution:
    status: str
    z: np.ndarray
    objective: float
    multipliers: dict
    iterations: int
    solve_time: float
    kkt: float = math.nan
    message: str = ""
    log: tuple = field(default=(), repr=False)

    @property
    def ok(self) -> bool:
        return self.status == OPTIMAL


class Solver(Protocol):
    """Anything with this method can replace the built-in solver."""

    name: str

    def solve(self, problem: NlpProblem, z0, opts: SolveOptions | None = None) -> Solution: ...


# ---------------------------------------------------------------------------
# residuals


def _dense_jacobian(p: NlpProblem, z) -> np.ndarray:
    rows, cols = p.jacobian_structure()
    if p.m == 0:
        return np.zeros((0, p.n))
    return coo_matrix((p.jacobian(z), (rows, cols)), shape=(p.m, p.n)).toarray()


def _dense_hessian(p: NlpProblem, z, lam, obj_factor) -> np.ndarray:
    rows, cols = p.hessian_structure()
    vals = p.hessian(z, lam, obj_factor)
    low = coo_matrix((vals, (rows, cols)), shape=(p.n, p.n)).toarray()
    return low + low.T - np.diag(np.diag(low))


def kkt_residual(p: NlpProblem, z, multipliers: dict) -> float:
    """Infinity norm of the first-order optimality conditions at ``(z, multipliers)``.

    Blocks: stationarity divided by ``1 + |grad f|_inf`` (over variables
    that are not fixed by their bounds), equality residuals, inequality
    and bound violations, sign violations of the multipliers and the
    complementarity products.  Multipliers are a dict with keys ``eq``,
    ``ineq``, ``lower`` and ``upper``; missing entries count as zero.
    """
    z = np.asarray(z, dtype=float)
    n = p.n
    y_eq = np.asarray(multipliers.get("eq", np.zeros(p.n_eq)), dtype=float)
    y_in = np.asarray(multipliers.get("ineq", np.zeros(p.n_ineq)), dtype=float)
    zl = np.asarray(multipliers.get("lower", np.zeros(n)), dtype=float)
    zu = np.asarray(multipliers.get("upper", np.zeros(n)), dtype=float)
    g = p.gradient(z)
    c = p.constraints(z)
    J = _dense_jacobian(p, z)
    y = np.concatenate([y_eq, y_in])
    free = p.lb < p.ub
    stat = g + J.T @ y - zl + zu
    parts = [np.abs(stat[free]) / (1.0 + (np.max(np.abs(g)) if n else 0.0))]
    parts.append(np.abs(c[: p.n_eq]))
    parts.append(np.maximum(c[p.n_eq :], 0.0))
    parts.append(np.maximum(-y_in, 0.0))
    parts.append(np.abs(y_in * c[p.n_eq :]))
    lo, hi = np.isfinite(p.lb), np.isfinite(p.ub)
    parts.append(np.maximum(p.lb[lo] - z[lo], 0.0))
    parts.append(np.maximum(z[hi] - p.ub[hi], 0.0))
    parts.append(np.maximum(-zl, 0.0))
    parts.append(np.maximum(-zu, 0.0))
    parts.append(np.abs(zl[lo & free] * (z[lo & free] - p.lb[lo & free])))
    parts.append(np.abs(zu[hi & free] * (p.ub[hi & free] - z[hi & free])))
    if np.any(zl[~lo] != 0) or np.any(zu[~hi] != 0):
        parts.append(np.concatenate([np.abs(zl[~lo]), np.abs(zu[~hi])]))
    flat = np.concatenate([np.atleast_1d(a) for a in parts]) if parts else np.zeros(1)
    return float(np.max(flat)) if flat.size else 0.0


# ---------------------------------------------------------------------------
# linear algebra


def _inertia(ldu, ipiv):
    """(positive, negative, zero) eigenvalue counts from a lower sytrf factor."""
    pos = neg = zero = 0
    i, n = 0, ldu.shape[0]
    while i < n:
        if ipiv[i] > 0:
            d = ldu[i, i]
            if d > 0:
                pos += 1
            elif d < 0:
                neg += 1
            else:
                zero += 1
            i += 1
        else:
            a, b, c = ldu[i, i], ldu[i + 1, i], ldu[i + 1, i + 1]
            det = a * c - b * b
            if det < 0:
                pos += 1
                neg += 1
            elif det > 0:
                if a + c > 0:
                    pos += 2
                else:
                    neg += 2
            else:
                zero += 1
                if a + c > 0:
                    pos += 1
                elif a + c < 0:
                    neg += 1
                else:
                    zero += 1
            i += 2
    return pos, neg, zero


class _Factor:
    def __init__(self, ldu, ipiv):
        self.ldu, self.ipiv = ldu, ipiv

    def solve(self, rhs):
        x, info = lapack.dsytrs(self.ldu, self.ipiv, rhs, lower=1)
        if info != 0:
            raise np.linalg.LinAlgError("sytrs failed")
        return x


def _factor(K):
    # the default workspace forces the unblocked algorithm
    lwork, _ = lapack.dsytrf_lwork(K.shape[0], lower=1)
    ldu, ipiv, info = lapack.dsytrf(K, lower=1, lwork=max(1, int(lwork)), overwrite_a=True)
    if info < 0:
        raise np.linalg.LinAlgError("sytrf argument error")
    return _Factor(ldu, ipiv), _inertia(ldu, ipiv)


# ---------------------------------------------------------------------------
# the algorithm


class _Scaled:
    """The problem seen by the iteration: free variables, slacks, scaled rows."""

    def __init__(self, p: NlpProblem, z_template, free, obj_scale, row_scale):
        self.p = p
        self.z_template = z_template
        self.free = free
        self.nz = int(free.sum())
        self.ns = p.n_ineq
        self.n = self.nz + self.ns
        self.m = p.m
        self.df = obj_scale
        self.dc = row_scale
        self.lb = np.concatenate([p.lb[free], np.zeros(self.ns)])
        self.ub = np.concatenate([p.ub[free], np.full(self.ns, np.inf)])

    def full_z(self, x):
        z = self.z_template.copy()
        z[self.free] = x[: self.nz]
        return z

    def f(self, z):
        return self.df * self.p.objective(z)

    def grad(self, z):
        g = np.zeros(self.n)
        g[: self.nz] = self.df * self.p.gradient(z)[self.free]
        return g

    def c(self, z, x):
        c = self.p.constraints(z)
        c[self.p.n_eq :] += x[self.nz :]
        return self.dc * c

    def jac(self, z):
        J = np.zeros((self.m, self.n))
        if self.m:
            J[:, : self.nz] = self.dc[:, None] * _dense_jacobian(self.p, z)[:, self.free]
            J[self.p.n_eq + np.arange(self.ns), self.nz + np.arange(self.ns)] = self.dc[self.p.n_eq :]
        return J

    def hess(self, z, y):
        H = np.zeros((self.n, self.n))
        lam = self.dc * y
        H[: self.nz, : self.nz] = _dense_hessian(self.p, z, lam, self.df)[np.ix_(self.free, self.free)]
        return H


def _evaluate_safely(fn, *args):
    try:
        with np.errstate(all="raise"):
            out = fn(*args)
    except (DomainError, FloatingPointError, ZeroDivisionError, OverflowError, ValueError) as err:
        raise EvaluatorError(str(err)) from err
    if np.any(~np.isfinite(np.asarray(out, dtype=float))):
        raise EvaluatorError("non-finite value from an evaluator")
    return out


class InteriorPointSolver:
    name = "ipm"

    def solve(self, problem: NlpProblem, z0, opts: SolveOptions | None = None) -> Solution:
        return solve(problem, z0, opts)


def _push_interior(x, lb, ub):
    x = x.copy()
    lo, hi = np.isfinite(lb), np.isfinite(ub)
    both = lo & hi
    p_lo = PUSH * np.maximum(1.0, np.abs(np.where(lo, lb, 0.0)))
    p_hi = PUSH * np.maximum(1.0, np.abs(np.where(hi, ub, 0.0)))
    width = np.where(both, ub - lb, np.inf)
    p_lo = np.where(both, np.minimum(p_lo, PUSH * width), p_lo)
    p_hi = np.where(both, np.minimum(p_hi, PUSH * width), p_hi)
    x = np.where(lo, np.maximum(x, lb + p_lo), x)
    x = np.where(hi, np.minimum(x, ub - p_hi), x)
    return x


def _max_step(v, dv, tau):
    """Largest alpha in (0, 1] keeping ``v + alpha dv >= (1 - tau) v`` for positive ``v``."""
    neg = dv < 0
    if not np.any(neg):
        return 1.0
    return float(min(1.0, np.min(-tau * v[neg] / dv[neg])))


def solve(p: NlpProblem, z0, opts: SolveOptions | None = None) -> Solution:
    """Minimize ``p`` from ``z0`` (clipped into the bounds first)."""
    opts = opts or SolveOptions()
    t_start = time.perf_counter()
    log: list = []
    z0 = np.clip(np.asarray(z0, dtype=float).copy(), p.lb, p.ub)
    if z0.shape != (p.n,):
        raise ValueError(f"z0 has shape {z0.shape}, expected ({p.n},)")
    if np.any(p.lb > p.ub):
        raise ValueError("inverted variable bounds")
    free = p.lb < p.ub
    z_template = np.where(free, z0, p.lb)

    def fail(msg, z, it):
        return Solution(INFEASIBLE, z, math.nan, _zero_multipliers(p), it, time.perf_counter() - t_start,
                        math.nan, msg, tuple(log))

    # scaling from gradients at the start point
    try:
        g0 = _evaluate_safely(p.gradient, z_template)
        J0 = _evaluate_safely(_dense_jacobian, p, z_template) if p.m else np.zeros((0, p.n))
    except EvaluatorError as err:
        return fail(f"evaluation failed at the initial point: {err}", z_template, 0)
    if opts.scaling:
        gmax = np.max(np.abs(g0[free])) if free.any() else 0.0
        df = min(1.0, SCALE_MAX_GRAD / gmax) if gmax > 0 else 1.0
        rmax = np.max(np.abs(J0[:, free]), axis=1) if p.m and free.any() else np.zeros(p.m)
        dc = np.where(rmax > 0, np.minimum(1.0, SCALE_MAX_GRAD / np.where(rmax > 0, rmax, 1.0)), 1.0)
    else:
        df, dc = 1.0, np.ones(p.m)
    S = _Scaled(p, z_template, free, df, dc)
    nz, n, m = S.nz, S.n, S.m
    lb, ub = S.lb, S.ub
    lo, hi = np.isfinite(lb), np.isfinite(ub)
    only_lo, only_hi = lo & ~hi, hi & ~lo

    # initial primal point
    x = np.zeros(n)
    x[:nz] = _push_interior(z_template[free], lb[:nz], ub[:nz])
    try:
        z = S.full_z(x)
        gin = _evaluate_safely(p.ineq, z) if p.n_ineq else np.zeros(0)
    except EvaluatorError as err:
        return fail(f"evaluation failed at the initial point: {err}", z, 0)
    x[nz:] = _push_interior(np.maximum(-gin, 0.0), lb[nz:], ub[nz:])

    zl = np.where(lo, 1.0, 0.0)
    zu = np.where(hi, 1.0, 0.0)
    mu = opts.mu_init
    nu = 1.0
    dw_last = 0.0
    dw_floor = 0.0

    def barrier_parts(x, mu):
        sl = np.where(lo, x - lb, 1.0)
        su = np.where(hi, ub - x, 1.0)
        return sl, su

    def evaluate(x):
        z = S.full_z(x)
        f = _evaluate_safely(S.f, z)
        c = _evaluate_safely(S.c, z, x)
        return z, f, c

    def phi(x, f, mu):
        sl, su = barrier_parts(x, mu)
        if np.any(sl[lo] <= 0) or np.any(su[hi] <= 0):
            return math.inf
        val = f - mu * np.sum(np.log(sl[lo])) - mu * np.sum(np.log(su[hi]))
        val += KAPPA_D * mu * (np.sum(sl[only_lo]) + np.sum(su[only_hi]))
        return float(val)

    def grad_phi(x, g, mu):
        sl, su = barrier_parts(x, mu)
        out = g.copy()
        out[lo] -= mu / sl[lo]
        out[hi] += mu / su[hi]
        out[only_lo] += KAPPA_D * mu
        out[only_hi] -= KAPPA_D * mu
        return out

    try:
        z, f, c = evaluate(x)
        g = _evaluate_safely(S.grad, z)
        J = _evaluate_safely(S.jac, z)
    except EvaluatorError as err:
        return fail(f"evaluation failed at the initial point: {err}", S.full_z(x), 0)

    # least-squares multiplier estimates tend to be huge on transcribed problems
    y = np.zeros(m)

    best = None
    status = ITER_LIMIT
    message = ""
    it = 0
    while True:
        # unscaled multipliers and convergence test
        mult = _unscale(S, y, zl, zu, z, p)
        kkt = kkt_residual(p, z, mult)
        if best is None or kkt < best[0]:
            best = (kkt, z.copy(), mult, f / S.df)
        if kkt <= opts.kkt_tol:
            status = OPTIMAL
            break
        if it >= opts.max_iter:
            status = ITER_LIMIT
            message = "iteration limit reached"
            break
        if time.perf_counter() - t_start > opts.max_time:
            status = TIME_LIMIT
            message = "time limit reached"
            break

        sl, su = barrier_parts(x, mu)
        sd = max(S_MAX, (np.sum(np.abs(y)) + np.sum(zl) + np.sum(zu)) / max(1, m + n)) / S_MAX

        def barrier_error(mu_):
            stat = g + J.T @ y - zl + zu
            comp = np.concatenate([(sl * zl - mu_)[lo], (su * zu - mu_)[hi]])
            e = max(np.max(np.abs(stat), initial=0.0) / sd, np.max(np.abs(c), initial=0.0),
                    np.max(np.abs(comp), initial=0.0) / sd)
            return e

        while mu > opts.kkt_tol / 10.0 and barrier_error(mu) <= KAPPA_EPS * mu:
            mu = max(opts.kkt_tol / 10.0, min(opts.mu_shrink * mu, mu ** THETA_MU))
        tau = max(TAU, 1.0 - mu)

        W = _evaluate_safely(S.hess, z, y)
        sigma = np.zeros(n)
        sigma[lo] += zl[lo] / sl[lo]
        sigma[hi] += zu[hi] / su[hi]
        gphi = grad_phi(x, g, mu)
        rhs = -np.concatenate([gphi + J.T @ y, c])

        # factor with inertia correction
        dw = dw_floor
        dc_reg = 0.0
        attempts = 0
        while True:
            K = np.zeros((n + m, n + m))
            K[:n, :n] = W + np.diag(sigma + dw)
            K[n:, :n] = J
            K[:n, n:] = J.T
            if m:
                K[n:, n:] = -dc_reg * np.eye(m)
            fac, (npos, nneg, nzero) = _factor(K)
            if npos == n and nneg == m and nzero == 0:
                break
            if nzero > 0 and dc_reg == 0.0 and m:
                dc_reg = 1e-8 * mu ** 0.25
            if npos != n or nzero > 0:
                if dw == dw_floor:
                    dw = max(dw_floor, 1e-4) if dw_last == 0.0 else max(dw_floor, 1e-20, dw_last / 3.0)
                elif dw == 0.0:
                    dw = 1e-4 if dw_last == 0.0 else max(1e-20, dw_last / 3.0)
                else:
                    dw *= 100.0 if dw_last == 0.0 else 8.0
            attempts += 1
            if dw > 1e40 or attempts > 60:
                status = INFEASIBLE
                message = "could not correct the KKT matrix inertia"
                break
        if status == INFEASIBLE:
            break
        if dw > dw_floor:
            dw_last = dw
        step = fac.solve(rhs)
        dx, dy = step[:n], step[n:]

        # fraction to boundary
        alpha_max = min(_max_step(sl[lo], dx[lo], tau), _max_step(su[hi], -dx[hi], tau))
        dzl = np.zeros(n)
        dzu = np.zeros(n)
        dzl[lo] = (mu - zl[lo] * dx[lo]) / sl[lo] - zl[lo]
        dzu[hi] = (mu + zu[hi] * dx[hi]) / su[hi] - zu[hi]
        alpha_z = min(_max_step(zl[lo], dzl[lo], tau), _max_step(zu[hi], dzu[hi], tau))

        # l1 merit penalty update
        c1 = float(np.sum(np.abs(c)))
        curv = float(dx @ (W + np.diag(sigma + dw)) @ dx)
        lin = float(gphi @ dx)
        if c1 > 0:
            need = (lin + 0.5 * max(curv, 0.0)) / (0.9 * c1)
            if need > nu:
                nu = need + 1.0
            elif nu > 10.0 * (max(need, 0.0) + 1.0):
                # a stale large penalty blocks progress near feasibility
                nu = max(need, 0.0) + 1.0
        phi0 = phi(x, f, mu) + nu * c1
        dmerit = lin - nu * c1

        accepted = False
        alpha = alpha_max
        trial = None
        soc_tried = False
        domain_failures = 0
        while alpha > 1e-14:
            xt = x + alpha * dx
            try:
                zt, ft, ct = evaluate(xt)
                merit = phi(xt, ft, mu) + nu * float(np.sum(np.abs(ct)))
            except EvaluatorError:
                domain_failures += 1
                alpha *= 0.5
                continue
            if merit <= phi0 + ARMIJO * alpha * dmerit:
                trial = (xt, zt, ft, ct, alpha)
                accepted = True
                break
            if not soc_tried and alpha == alpha_max and c1 > 0:
                soc_tried = True
                found = _second_order_correction(fac, x, alpha * dx, ct, c1, n, evaluate, phi, nu, mu,
                                                 phi0 + ARMIJO * alpha * dmerit, sl, su, lo, hi, tau)
                if found is not None:
                    trial = found + (alpha,)
                    accepted = True
                    break
            alpha *= 0.5
        if not accepted:
            if domain_failures and trial is None:
                status = INFEASIBLE
                message = "evaluator failed along the search direction"
                break
            # take a short step rather than stall
            alpha = min(alpha_max, 1e-3)
            xt = x + alpha * dx
            try:
                zt, ft, ct = evaluate(xt)
            except EvaluatorError as err:
                status = INFEASIBLE
                message = f"evaluator failed: {err}"
                break
            trial = (xt, zt, ft, ct, alpha)
        x, z, f, c, alpha = trial
        # proximal term: grow after heavily cut steps, relax after long ones
        if alpha < 0.1 * alpha_max:
            dw_floor = max(PROX_MIN, 10.0 * dw_floor)
        elif alpha >= 0.5 * alpha_max:
            dw_floor = dw_floor / PROX_DECAY if dw_floor > 1e-6 else 0.0
        y = y + alpha * dy
        zl = zl + alpha_z * dzl
        zu = zu + alpha_z * dzu
        # keep bound multipliers near the primal-dual relation
        sl, su = barrier_parts(x, mu)
        zl[lo] = np.clip(zl[lo], mu / (KAPPA_SIGMA * sl[lo]), KAPPA_SIGMA * mu / sl[lo])
        zu[hi] = np.clip(zu[hi], mu / (KAPPA_SIGMA * su[hi]), KAPPA_SIGMA * mu / su[hi])
        try:
            g = _evaluate_safely(S.grad, z)
            J = _evaluate_safely(S.jac, z)
        except EvaluatorError as err:
            status = INFEASIBLE
            message = f"evaluator failed: {err}"
            break
        it += 1
        log.append((it, float(f / S.df), float(np.max(np.abs(c), initial=0.0)), float(mu), float(alpha),
                    float(alpha_max), float(alpha_z), float(dw), float(kkt)))

    elapsed = time.perf_counter() - t_start
    if status == OPTIMAL:
        return Solution(status, z.copy(), float(f / S.df), mult, it, elapsed, kkt, "", tuple(log))
    kkt_b, z_b, mult_b, f_b = best
    return Solution(status, z_b, float(f_b), mult_b, it, elapsed, kkt_b, message, tuple(log))


def _second_order_correction(fac, x, step, c_trial, c1_prev, n, evaluate, phi, nu, mu, target, sl, su, lo, hi,
                             tau, max_soc=4):
    """Repeated second-order corrections of a rejected step; returns the accepted trial or None."""
    c_acc = np.zeros_like(c_trial)
    c_soc = c_trial
    d = step
    theta_prev = c1_prev
    for _ in range(max_soc):
        c_acc = c_acc + c_soc
        corr = fac.solve(np.concatenate([np.zeros(n), -c_acc]))[:n]
        d = step + corr
        a = min(_max_step(sl[lo], d[lo], tau), _max_step(su[hi], -d[hi], tau))
        xs = x + a * d
        try:
            zs, fs, cs = evaluate(xs)
        except EvaluatorError:
            return None
        merit = phi(xs, fs, mu) + nu * float(np.sum(np.abs(cs)))
        if merit <= target:
            return xs, zs, fs, cs
        theta = float(np.sum(np.abs(cs)))
        if a < 1.0 or theta > 0.99 * theta_prev:
            return None
        theta_prev = theta
        c_soc = cs
    return None


def _zero_multipliers(p):
    return {"eq": np.zeros(p.n_eq), "ineq": np.zeros(p.n_ineq), "lower": np.zeros(p.n), "upper": np.zeros(p.n)}


def _unscale(S: _Scaled, y, zl, zu, z, p: NlpProblem) -> dict:
    """Multipliers of the original problem from the internal iterate."""
    y_orig = y * S.dc / S.df
    lower = np.zeros(p.n)
    upper = np.zeros(p.n)
    lower[S.free] = zl[: S.nz] / S.df
    upper[S.free] = zu[: S.nz] / S.df
    fixed = ~S.free
    if np.any(fixed):
        r = p.gradient(z)
        if p.m:
            r = r + _dense_jacobian(p, z).T @ y_orig
        lower[fixed] = np.maximum(r[fixed], 0.0)
        upper[fixed] = np.maximum(-r[fixed], 0.0)
    return {"eq": y_orig[: p.n_eq], "ineq": y_orig[p.n_eq :], "lower": lower, "upper": upper}
