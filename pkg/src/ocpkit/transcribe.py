"""Transcription of an :class:`~ocpkit.ocp.OcpModel` into a sparse NLP.

Variable layout is point-major: the states of grid point ``p`` are followed
by its controls (LGR's final, noncollocated point has no controls), then the
initial and terminal slack blocks, then ``tf`` when it is free.

Every nonlinear piece of the NLP (dynamics contributions to a defect row,
path rows, the integrand and the Mayer term) is a pointwise scalar
expression evaluated at many grid points at once.  Time is rewritten as
``t = p0 + p1 * tf`` with per-point parameters so that derivatives through a
free final time fall out of the expression machinery.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import expr as ex
from .colloc import EULER, H_METHODS, LGR, METHODS, TRAPEZOID, HGrid, LgrGrid, Mesh, barycentric_interpolate, h_weights
from .nlp.problem import NlpProblem
from .ocp import FREE, InvertedBounds, OcpModel


class OutOfRange(ValueError):
    pass


P0, P1, P2 = ex.Var(ex.PARAM, 0), ex.Var(ex.PARAM, 1), ex.Var(ex.PARAM, 2)


@dataclass
class Layout:
    """Where every discrete quantity lives in the design vector ``z``.

    ``q_defect`` and ``e`` are the equality and inequality row counts of the
    NLP.  ``q_boundary`` counts the boundary conditions of the discrete OCP;
    they are realised as box bounds on the endpoint states, so the
    OCP-level equality count ``q`` is ``q_defect + q_boundary``.
    """

    method: str
    n_st: int
    n_ctr: int
    state_index: np.ndarray
    control_index: np.ndarray
    slack_x0_index: np.ndarray
    slack_xf_index: np.ndarray
    tf_index: int | None
    n: int
    q_defect: int
    e: int
    q_boundary: int
    t0: float
    t_ex: float
    tf_fixed: float | None
    fractions: np.ndarray
    control_fractions: np.ndarray
    grid: object = None

    @property
    def q(self) -> int:
        return self.q_defect + self.q_boundary

    @property
    def n_state_points(self) -> int:
        return self.state_index.shape[0]

    @property
    def n_control_points(self) -> int:
        return self.control_index.shape[0]

    def tf_of(self, z) -> float:
        return float(z[self.tf_index]) if self.tf_index is not None else float(self.tf_fixed)

    def times(self, tf: float, controls: bool = False) -> np.ndarray:
        frac = self.control_fractions if controls else self.fractions
        start = self.t0 + self.t_ex
        return start + frac * (tf - start)


@dataclass
class Trajectory:
    """Discrete solution: state samples on ``t``, control samples on ``t_u``."""

    method: str
    t: np.ndarray
    X: np.ndarray
    t_u: np.ndarray
    U: np.ndarray
    tf: float
    t_start: float
    slack_x0: np.ndarray = field(default_factory=lambda: np.zeros(0))
    slack_xf: np.ndarray = field(default_factory=lambda: np.zeros(0))
    mesh: Mesh | None = None
    ns: tuple = ()

    @property
    def n_st(self) -> int:
        return self.X.shape[1]

    @property
    def n_ctr(self) -> int:
        return self.U.shape[1]


# ---------------------------------------------------------------------------
# pointwise terms


class _Term:
    """A compiled scalar expression evaluated at ``m`` points.

    ``columns`` maps each differentiable variable to its z-index per point;
    ``params`` holds per-point parameter values.  ``targets`` lists
    ``(selection, rows)`` pairs: the value at points ``selection`` is added
    to constraint rows ``rows``.  Objective terms have ``targets=None``.
    """

    def __init__(self, e: ex.Expr, m: int, columns: dict, params: dict, targets):
        self.ce = ex.CompiledExpr(e)
        self.m = m
        self.columns = columns
        self.params = {k: np.broadcast_to(np.asarray(v, dtype=float), (m,)) for k, v in params.items()}
        self.targets = targets
        for v in self.ce.support:
            if v not in columns:
                raise ValueError(f"no column for {v.name}")
        self.support_cols = [np.broadcast_to(columns[v], (m,)) for v in self.ce.support]

    def lookup(self, z):
        cache = {}

        def get(v):
            if v in cache:
                return cache[v]
            if v.kind == ex.PARAM:
                out = self.params[v]
            else:
                out = z[np.broadcast_to(self.columns[v], (self.m,))]
            cache[v] = out
            return out

        return get

    def value(self, z):
        return np.broadcast_to(np.asarray(self.ce.value(self.lookup(z)), dtype=float), (self.m,))

    def gradient(self, z):
        val, der = self.ce.gradient(self.lookup(z))
        n_sup = len(self.ce.support)
        if n_sup == 0:
            der = np.zeros((0, self.m))
        return np.broadcast_to(np.asarray(val, dtype=float), (self.m,)), np.broadcast_to(der, (n_sup, self.m))

    def hessian(self, z):
        n_pairs = len(self.ce.hess_pairs)
        if n_pairs == 0:
            return np.zeros((0, self.m))
        return np.broadcast_to(self.ce.hessian(self.lookup(z)), (n_pairs, self.m))

    def point_weights(self, lam):
        """Multiplier attached to each point's value."""
        w = np.zeros(self.m)
        for sel, rows in self.targets:
            w[sel] += lam[rows]
        return w


def _dedupe(rows, cols):
    """Unique coordinate pairs and the inverse map of the raw entries."""
    if len(rows) == 0:
        return np.zeros(0, dtype=int), np.zeros(0, dtype=int), np.zeros(0, dtype=int)
    key = rows.astype(np.int64) * (int(cols.max()) + 1) + cols
    uniq, inverse = np.unique(key, return_inverse=True)
    width = int(cols.max()) + 1
    return (uniq // width).astype(int), (uniq % width).astype(int), inverse


class OcpNlp(NlpProblem):
    """NLP produced by :func:`assemble`."""

    def __init__(self, n, n_eq, n_ineq, lb, ub, con_terms, obj_terms, lin_rows, lin_cols, lin_vals, con_const,
                 obj_lin):
        self.n = n
        self.n_eq = n_eq
        self.n_ineq = n_ineq
        self.lb = lb
        self.ub = ub
        self.con_terms = con_terms
        self.obj_terms = obj_terms
        self.con_const = con_const
        self.obj_lin = obj_lin
        m = n_eq + n_ineq
        self._A = _sparse(lin_rows, lin_cols, lin_vals, (m, n))

        # Jacobian structure: linear entries, then each term's (rows, col) per support var
        raw_r = [lin_rows]
        raw_c = [lin_cols]
        for t in con_terms:
            for sel, rows in t.targets:
                for cols in t.support_cols:
                    raw_r.append(np.asarray(rows))
                    raw_c.append(cols[sel])
        raw_r = np.concatenate(raw_r).astype(int) if raw_r else np.zeros(0, int)
        raw_c = np.concatenate(raw_c).astype(int) if raw_c else np.zeros(0, int)
        self._jr, self._jc, self._jinv = _dedupe(raw_r, raw_c)
        self._lin_vals = np.asarray(lin_vals, dtype=float)

        # Hessian structure (lower triangle)
        hr, hc = [], []
        for t in con_terms + obj_terms:
            for a, b in t.ce.hess_pairs:
                ca, cb = t.support_cols[a], t.support_cols[b]
                hr.append(np.maximum(ca, cb))
                hc.append(np.minimum(ca, cb))
        if hr:
            hr, hc = np.concatenate(hr).astype(int), np.concatenate(hc).astype(int)
        else:
            hr, hc = np.zeros(0, int), np.zeros(0, int)
        self._hr, self._hc, self._hinv = _dedupe(hr, hc)

        # gradient scatter for objective terms
        self._obj_cols = [np.concatenate(t.support_cols) if t.support_cols else np.zeros(0, int) for t in obj_terms]

    # -- values ----------------------------------------------------------

    def objective(self, z):
        z = np.asarray(z, dtype=float)
        total = float(self.obj_lin @ z)
        for t in self.obj_terms:
            total += float(np.sum(t.value(z)))
        return total

    def gradient(self, z):
        z = np.asarray(z, dtype=float)
        g = self.obj_lin.copy()
        for t, cols in zip(self.obj_terms, self._obj_cols):
            if len(cols):
                _, der = t.gradient(z)
                np.add.at(g, cols, der.ravel())
        return g

    def constraints(self, z):
        z = np.asarray(z, dtype=float)
        c = self._A @ z + self.con_const
        for t in self.con_terms:
            v = t.value(z)
            for sel, rows in t.targets:
                np.add.at(c, rows, v[sel])
        return c

    def jacobian_structure(self):
        return self._jr, self._jc

    def jacobian(self, z):
        z = np.asarray(z, dtype=float)
        raw = [self._lin_vals]
        for t in self.con_terms:
            _, der = t.gradient(z)
            for sel, rows in t.targets:
                for k in range(len(t.support_cols)):
                    raw.append(der[k][sel])
        raw = np.concatenate(raw) if raw else np.zeros(0)
        return np.bincount(self._jinv, weights=raw, minlength=len(self._jr))

    def hessian_structure(self):
        return self._hr, self._hc

    def hessian(self, z, lam, obj_factor=1.0):
        z = np.asarray(z, dtype=float)
        raw = []
        for t in self.con_terms:
            if not t.ce.hess_pairs:
                continue
            w = t.point_weights(lam)
            raw.append((t.hessian(z) * w).ravel())
        for t in self.obj_terms:
            if not t.ce.hess_pairs:
                continue
            raw.append((t.hessian(z) * obj_factor).ravel())
        if not raw:
            return np.zeros(len(self._hr))
        raw = np.concatenate(raw)
        return np.bincount(self._hinv, weights=raw, minlength=len(self._hr))


def _sparse(rows, cols, vals, shape):
    from scipy.sparse import csr_matrix

    return csr_matrix((np.asarray(vals, dtype=float), (np.asarray(rows, int), np.asarray(cols, int))), shape=shape)


# ---------------------------------------------------------------------------
# assembly


def _grid(method: str, N=None, K=None, Ns=None, mesh=None):
    if method in H_METHODS:
        if N is None or N < 2:
            raise ValueError("h-methods need N >= 2 grid points")
        frac = HGrid.fractions(N)
        return None, frac, frac, N, N
    if method == LGR:
        if mesh is None:
            if Ns is not None:
                mesh = Mesh.uniform(len(Ns), Ns)
            else:
                mesh = Mesh.uniform(K or 1, N if N is not None else 10)
        grid = LgrGrid.build(mesh)
        state_frac = 0.5 * (grid.state_tau() + 1.0)
        state_frac[0], state_frac[-1] = 0.0, 1.0
        return grid, state_frac, state_frac[:-1], grid.n_state_points, grid.n_control_points
    raise ValueError(f"unknown method {method!r}; choose one of {METHODS}")


def make_layout(model: OcpModel, method: str, N=None, K=None, Ns=None, mesh=None) -> Layout:
    grid, frac, cfrac, n_sp, n_cp = _grid(method, N, K, Ns, mesh)
    n_st, n_ctr = model.n_st, model.n_ctr
    state_index = np.zeros((n_sp, n_st), dtype=int)
    control_index = np.zeros((n_cp, n_ctr), dtype=int)
    pos = 0
    for p in range(n_sp):
        state_index[p] = pos + np.arange(n_st)
        pos += n_st
        if p < n_cp:
            control_index[p] = pos + np.arange(n_ctr)
            pos += n_ctr
    slack0 = np.arange(pos, pos + n_st) if model.slack_x0 else np.zeros(0, dtype=int)
    pos += slack0.size
    slackf = np.arange(pos, pos + n_st) if model.slack_xf else np.zeros(0, dtype=int)
    pos += slackf.size
    tf_index = None
    if model.final_time_is_dv:
        tf_index = pos
        pos += 1
    n_defect_points = (n_sp - 1) if method in H_METHODS else n_cp
    q_defect = n_defect_points * n_st
    n_path_points = n_sp if method in H_METHODS else n_cp
    e = 0
    q_path_eq = 0
    for pc in model.path:
        if pc.lower == pc.upper:
            q_path_eq += n_path_points
        else:
            e += n_path_points * (int(math.isfinite(pc.lower)) + int(math.isfinite(pc.upper)))
    mask0, _, _ = model.boundary_arrays("x0")
    maskf, _, _ = model.boundary_arrays("xf")
    if model.slack_x0:
        e += 2 * int(mask0.sum())
    if model.slack_xf:
        e += 2 * int(maskf.sum())
    return Layout(
        method=method,
        n_st=n_st,
        n_ctr=n_ctr,
        state_index=state_index,
        control_index=control_index,
        slack_x0_index=slack0,
        slack_xf_index=slackf,
        tf_index=tf_index,
        n=pos,
        q_defect=q_defect + q_path_eq,
        e=e,
        q_boundary=int(mask0.sum() * (not model.slack_x0) + maskf.sum() * (not model.slack_xf)),
        t0=model.t0,
        t_ex=model.t_ex,
        tf_fixed=None if model.final_time_is_dv else model.tf_fixed,
        fractions=frac,
        control_fractions=cfrac,
        grid=grid,
    )


def assemble(model: OcpModel, method: str, N: int | None = None, K: int | None = None, Ns=None,
             mesh: Mesh | None = None) -> tuple[OcpNlp, Layout]:
    """Transcribe ``model`` with ``method`` (``euler``, ``trapezoid`` or ``lgr``).

    h-methods take ``N`` grid points; LGR takes ``K`` intervals with ``N``
    collocation points each, a list ``Ns``, or an explicit :class:`Mesh`.
    """
    model = model.freeze()
    lay = make_layout(model, method, N, K, Ns, mesh)
    n_st, n_ctr = model.n_st, model.n_ctr
    start = model.t0 + model.t_ex
    tf_free = model.final_time_is_dv
    if not tf_free and not model.tf_fixed > start:
        raise InvertedBounds(f"fixed final time {model.tf_fixed} must exceed t0 + t_ex = {start}")

    # span expression (tf - t0 - t_ex) and the time rewrite
    if tf_free:
        span = ex.sub(ex.TF, ex.Const(start))
        time_expr = ex.add(P0, ex.mul(P1, ex.TF))
    else:
        span = ex.Const(model.tf_fixed - start)
        time_expr = P0

    def prepare(e: ex.Expr) -> ex.Expr:
        mapping = {ex.T: time_expr}
        if not tf_free:
            mapping[ex.TF] = ex.Const(model.tf_fixed)
        return ex.substitute(e, mapping)

    def time_params(frac):
        if tf_free:
            return {P0: start * (1.0 - frac), P1: frac}
        return {P0: start + frac * (model.tf_fixed - start)}

    def point_columns(points, ctrl_points):
        cols = {}
        for i in range(n_st):
            cols[ex.state(i)] = lay.state_index[points, i]
        if ctrl_points is not None:
            for i in range(n_ctr):
                cols[ex.control(i)] = lay.control_index[ctrl_points, i]
        if tf_free:
            cols[ex.TF] = np.full(len(points), lay.tf_index)
        return cols

    con_terms: list[_Term] = []
    obj_terms: list[_Term] = []
    lin_r: list = []
    lin_c: list = []
    lin_v: list = []
    n_eq = lay.q_defect
    m = lay.q_defect + lay.e
    con_const = np.zeros(m)
    obj_lin = np.zeros(lay.n)

    F = [prepare(f) for f in model.dynamics]
    n_sp = lay.n_state_points

    # -- dynamics defects ---------------------------------------------------
    if method in H_METHODS:
        N_ = n_sp
        pts = np.arange(N_)
        rows_of = lambda i, s: i * n_st + s  # noqa: E731
        for i in range(N_ - 1):
            for s in range(n_st):
                r = rows_of(i, s)
                lin_r += [r, r]
                lin_c += [lay.state_index[i + 1, s], lay.state_index[i, s]]
                lin_v += [1.0, -1.0]
        frac = lay.fractions
        if method == EULER:
            scale = ex.div(span, ex.Const(N_ - 1.0))
            sel = pts[1:]
            for s in range(n_st):
                e = ex.neg(ex.mul(scale, F[s]))
                targets = [(np.arange(N_ - 1), rows_of(np.arange(N_ - 1), s))]
                con_terms.append(_Term(e, N_ - 1, point_columns(sel, sel), time_params(frac[sel]), targets))
        else:
            scale = ex.div(span, ex.Const(2.0 * (N_ - 1.0)))
            for s in range(n_st):
                e = ex.neg(ex.mul(scale, F[s]))
                targets = [
                    (pts[:-1], rows_of(pts[:-1], s)),
                    (pts[1:], rows_of(pts[1:] - 1, s)),
                ]
                con_terms.append(_Term(e, N_, point_columns(pts, pts), time_params(frac), targets))
        path_points = pts
        path_ctrl = pts
        path_frac = frac
    else:
        grid: LgrGrid = lay.grid
        offsets = grid.offsets
        n_cp = lay.n_control_points
        cpts = np.arange(n_cp)
        for k, itv in enumerate(grid.intervals):
            Nk = len(itv.tau)
            for i in range(Nk):
                c = offsets[k] + i
                for s in range(n_st):
                    r = c * n_st + s
                    for j in range(Nk + 1):
                        lin_r.append(r)
                        lin_c.append(lay.state_index[offsets[k] + j, s])
                        lin_v.append(itv.D[i, j])
        half_len = 0.5 * np.diff(grid.mesh.M)[grid.interval_of_point()]
        params = time_params(lay.control_fractions)
        params[P2] = half_len
        for s in range(n_st):
            e = ex.neg(ex.mul(ex.mul(ex.mul(ex.Const(0.5), span), P2), F[s]))
            targets = [(cpts, cpts * n_st + s)]
            con_terms.append(_Term(e, n_cp, point_columns(cpts, cpts), params, targets))
        path_points = cpts
        path_ctrl = cpts
        path_frac = lay.control_fractions

    # -- path constraints ---------------------------------------------------
    n_pp = len(path_points)
    row = n_st * (n_sp - 1 if method in H_METHODS else lay.n_control_points)
    eq_row = row
    ineq_row = n_eq
    for pc in model.path:
        e = prepare(pc.expr)
        cols = point_columns(path_points, path_ctrl)
        params = time_params(path_frac)
        sel = np.arange(n_pp)
        if pc.lower == pc.upper:
            rows = eq_row + sel
            eq_row += n_pp
            con_terms.append(_Term(e, n_pp, cols, params, [(sel, rows)]))
            con_const[rows] -= pc.upper
            continue
        if math.isfinite(pc.upper):
            rows = ineq_row + sel
            ineq_row += n_pp
            con_terms.append(_Term(e, n_pp, cols, params, [(sel, rows)]))
            con_const[rows] -= pc.upper
        if math.isfinite(pc.lower):
            rows = ineq_row + sel
            ineq_row += n_pp
            con_terms.append(_Term(ex.neg(e), n_pp, cols, params, [(sel, rows)]))
            con_const[rows] += pc.lower

    # -- slack rows: |x(endpoint) - target| <= tol + slack ------------------
    for which, enabled, sidx, point, weights in (
        ("x0", model.slack_x0, lay.slack_x0_index, 0, model.w_s0),
        ("xf", model.slack_xf, lay.slack_xf_index, n_sp - 1, model.w_sf),
    ):
        if not enabled:
            continue
        mask, value, tol = model.boundary_arrays(which)
        obj_lin[sidx] += weights
        for i in np.nonzero(mask)[0]:
            xcol = lay.state_index[point, i]
            # target - tol - x - s <= 0
            lin_r += [ineq_row, ineq_row]
            lin_c += [xcol, sidx[i]]
            lin_v += [-1.0, -1.0]
            con_const[ineq_row] = value[i] - tol[i]
            ineq_row += 1
            # x - target - tol - s <= 0
            lin_r += [ineq_row, ineq_row]
            lin_c += [xcol, sidx[i]]
            lin_v += [1.0, -1.0]
            con_const[ineq_row] = -value[i] - tol[i]
            ineq_row += 1
    assert ineq_row == m, (ineq_row, m)

    # -- objective ----------------------------------------------------------
    if model.lagrange is not None:
        L = prepare(model.lagrange)
        if method in H_METHODS:
            qw = h_weights(n_sp, method) / (n_sp - 1.0)
            keep = np.nonzero(qw)[0]
            pts = keep
            frac = lay.fractions[keep]
            qw = qw[keep]
        else:
            qw = 0.5 * lay.grid.quadrature_weights()
            pts = np.arange(lay.n_control_points)
            frac = lay.control_fractions
        params = time_params(frac)
        params[P2] = qw
        e = ex.mul(ex.mul(span, P2), L)
        obj_terms.append(_Term(e, len(pts), point_columns(pts, pts), params, None))
    if model.mayer is not None:
        e = model.mayer if tf_free else ex.substitute(model.mayer, {ex.TF: ex.Const(model.tf_fixed)})
        cols = {}
        for i in range(n_st):
            cols[ex.Var(ex.STATE_INITIAL, i)] = np.array([lay.state_index[0, i]])
            cols[ex.Var(ex.STATE_FINAL, i)] = np.array([lay.state_index[-1, i]])
        if tf_free:
            cols[ex.TF] = np.array([lay.tf_index])
        obj_terms.append(_Term(e, 1, cols, {}, None))

    lb, ub = _box_bounds(model, lay)
    nlp = OcpNlp(lay.n, n_eq, lay.e, lb, ub, con_terms, obj_terms, np.array(lin_r, int), np.array(lin_c, int),
                 np.array(lin_v, float), con_const, obj_lin)
    nlp.layout = lay
    nlp.model = model
    return nlp, lay


def _box_bounds(model: OcpModel, lay: Layout):
    lb = np.full(lay.n, -np.inf)
    ub = np.full(lay.n, np.inf)
    lb[lay.state_index] = model.x_min
    ub[lay.state_index] = model.x_max
    if lay.n_ctr:
        lb[lay.control_index] = model.u_min
        ub[lay.control_index] = model.u_max
    for which, point, soft in (("x0", 0, model.slack_x0), ("xf", -1, model.slack_xf)):
        if soft:
            # slack rows carry this endpoint instead of hard bounds
            continue
        mask, value, tol = model.boundary_arrays(which)
        idx = lay.state_index[point]
        lo = np.where(mask, np.maximum(lb[idx], value - tol), lb[idx])
        hi = np.where(mask, np.minimum(ub[idx], value + tol), ub[idx])
        if np.any(lo > hi):
            raise InvertedBounds(f"{which} boundary interval does not meet the state bounds")
        lb[idx], ub[idx] = lo, hi
    for which, sidx in (("x0", lay.slack_x0_index), ("xf", lay.slack_xf_index)):
        if sidx.size:
            mask, _, _ = model.boundary_arrays(which)
            lb[sidx] = 0.0
            ub[sidx] = np.where(mask, np.inf, 0.0)
    if lay.tf_index is not None:
        lb[lay.tf_index], ub[lay.tf_index] = model.tf_min, model.tf_max
    return lb, ub


# ---------------------------------------------------------------------------
# guesses and trajectories


def _fallback(lo, hi):
    if math.isfinite(lo) and math.isfinite(hi):
        return 0.5 * (lo + hi)
    if math.isfinite(lo):
        return lo
    if math.isfinite(hi):
        return hi
    return 0.0


def default_guess(model: OcpModel, lay: Layout) -> np.ndarray:
    """Straight-line states from x0 to xf, mid-bound controls, mid-range tf."""
    z = np.zeros(lay.n)
    for i in range(model.n_st):
        fallback = _fallback(model.x_min[i], model.x_max[i])
        a = model.x0[i] if model.x0[i] is not FREE else fallback
        if model.xf[i] is not FREE:
            b = model.xf[i]
        elif model.guess_xf is not None and model.guess_xf[i] is not FREE:
            b = model.guess_xf[i]
        else:
            b = fallback
        z[lay.state_index[:, i]] = a + lay.fractions * (b - a)
    for i in range(model.n_ctr):
        z[lay.control_index[:, i]] = _fallback(model.u_min[i], model.u_max[i])
    if lay.tf_index is not None:
        if model.guess_tf is not None:
            z[lay.tf_index] = model.guess_tf
        else:
            z[lay.tf_index] = _fallback(model.tf_min, model.tf_max)
    return z


def guess_from_trajectory(traj: Trajectory, lay: Layout, tf: float | None = None) -> np.ndarray:
    """Sample ``traj`` onto a layout's grid, holding the end values outside its span.

    Used for warm starts; ``tf`` defaults to the trajectory's final time.
    """
    tf = traj.tf if tf is None else tf
    if lay.tf_fixed is not None:
        tf = lay.tf_fixed
    z = np.zeros(lay.n)
    ts = np.clip(lay.times(tf), traj.t_start, traj.tf)
    for k, t in enumerate(ts):
        x, _ = interpolate(traj, t)
        z[lay.state_index[k]] = x
    if lay.n_ctr:
        tu = np.clip(lay.times(tf, controls=True), traj.t_start, traj.tf)
        for k, t in enumerate(tu):
            _, u = interpolate(traj, t)
            z[lay.control_index[k]] = u
    if lay.tf_index is not None:
        z[lay.tf_index] = tf
    if lay.slack_x0_index.size and traj.slack_x0.size:
        z[lay.slack_x0_index] = traj.slack_x0
    if lay.slack_xf_index.size and traj.slack_xf.size:
        z[lay.slack_xf_index] = traj.slack_xf
    return z


def extract(z, lay: Layout) -> Trajectory:
    z = np.asarray(z, dtype=float)
    tf = lay.tf_of(z)
    mesh = lay.grid.mesh if lay.grid is not None else None
    return Trajectory(
        method=lay.method,
        t=lay.times(tf),
        X=z[lay.state_index].copy(),
        t_u=lay.times(tf, controls=True),
        U=z[lay.control_index].copy() if lay.n_ctr else np.zeros((lay.n_control_points, 0)),
        tf=tf,
        t_start=lay.t0 + lay.t_ex,
        slack_x0=z[lay.slack_x0_index].copy(),
        slack_xf=z[lay.slack_xf_index].copy(),
        mesh=mesh,
        ns=tuple(mesh.Ns) if mesh is not None else (),
    )


def interpolate(traj: Trajectory, t: float):
    """State and control at time ``t``.

    LGR trajectories use each interval's Lagrange polynomials (controls are
    extrapolated to the interval's right end); h-method trajectories are
    piecewise linear.
    """
    span = traj.tf - traj.t_start
    eps = 1e-9 * max(1.0, abs(traj.tf))
    if t < traj.t_start - eps or t > traj.tf + eps:
        raise OutOfRange(f"t = {t} outside [{traj.t_start}, {traj.tf}]")
    t = min(max(t, traj.t_start), traj.tf)
    if traj.method in H_METHODS or traj.mesh is None:
        x = np.array([np.interp(t, traj.t, traj.X[:, i]) for i in range(traj.n_st)])
        u = np.array([np.interp(t, traj.t_u, traj.U[:, i]) for i in range(traj.n_ctr)])
        return x, u
    # locate the mesh interval in tau
    tau = -1.0 + 2.0 * (t - traj.t_start) / span if span > 0 else -1.0
    M = traj.mesh.M
    k = int(np.clip(np.searchsorted(M, tau, side="right") - 1, 0, len(traj.ns) - 1))
    off = int(sum(traj.ns[:k]))
    nk = traj.ns[k]
    xs = traj.X[off : off + nk + 1]
    ts = traj.t[off : off + nk + 1]
    x = barycentric_interpolate(ts, xs, [t])[0]
    if traj.n_ctr:
        tus = traj.t_u[off : off + nk]
        us = traj.U[off : off + nk]
        if nk == 1:
            u = us[0].copy()
        else:
            u = barycentric_interpolate(tus, us, [t])[0]
    else:
        u = np.zeros(0)
    return np.atleast_1d(x), np.atleast_1d(u)


def trajectory_csv(traj: Trajectory, names=None) -> str:
    """CSV text ``t,x1..,u1..``; controls are blank where the grid has none."""
    sn = names[0] if names else [f"x{i + 1}" for i in range(traj.n_st)]
    cn = names[1] if names else [f"u{i + 1}" for i in range(traj.n_ctr)]
    lines = [",".join(["t"] + list(sn) + list(cn))]
    n_u = len(traj.t_u)
    for k, t in enumerate(traj.t):
        xs = [repr(float(v)) for v in traj.X[k]]
        if k < n_u and np.isclose(traj.t_u[k], t, rtol=0, atol=1e-12 * max(1.0, abs(t))):
            us = [repr(float(v)) for v in traj.U[k]]
        else:
            us = [""] * traj.n_ctr
        lines.append(",".join([repr(float(t))] + xs + us))
    return "\n".join(lines) + "\n"
