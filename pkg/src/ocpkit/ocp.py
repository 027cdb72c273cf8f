"""Bolza-form optimal control models.

A model is built incrementally with :func:`define` and the setter methods,
then frozen before transcription.  ``FREE`` marks boundary values and bounds
that are not imposed.
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field

import numpy as np

from . import expr as ex


class ModelError(ValueError):
    pass


class DimensionMismatch(ModelError):
    pass


class InvertedBounds(ModelError):
    pass


class MissingDynamics(ModelError):
    pass


class NegativeWeight(ModelError):
    pass


class UnboundedFinalTime(ModelError):
    pass


class FrozenModel(ModelError):
    pass


class _Free:
    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "FREE"

    def __reduce__(self):
        return (_Free, ())


FREE = _Free()


def is_free(value) -> bool:
    return value is FREE or (isinstance(value, str) and value.strip().lower() == "free")


def _values(values, n, name, default):
    if values is None:
        return [default] * n
    values = list(values)
    if len(values) != n:
        raise DimensionMismatch(f"{name} has {len(values)} entries, expected {n}")
    return [FREE if is_free(v) else float(v) for v in values]


def _bounds(values, n, name, missing):
    """Convert a list with FREE entries into a float array using ``missing`` for FREE."""
    vals = _values(values, n, name, FREE)
    return np.array([missing if v is FREE else v for v in vals], dtype=float)


@dataclass
class PathConstraint:
    expr: ex.Expr
    lower: float = -math.inf
    upper: float = 0.0


@dataclass
class OcpModel:
    """Single-phase Bolza problem with optional endpoint slacks.

    Bounds are stored as float arrays with +-inf for absent sides; ``x0`` and
    ``xf`` keep ``FREE`` entries so that omitted boundary rows are explicit.
    """

    n_st: int
    n_ctr: int
    x0: list
    xf: list
    x_min: np.ndarray
    x_max: np.ndarray
    u_min: np.ndarray
    u_max: np.ndarray
    dynamics: list | None = None
    lagrange: ex.Expr | None = None
    mayer: ex.Expr | None = None
    path: list = field(default_factory=list)
    x0_tol: np.ndarray | None = None
    xf_tol: np.ndarray | None = None
    tf_min: float = 0.001
    tf_max: float = math.inf
    tf_fixed: float | None = None
    final_time_is_dv: bool = False
    t0: float = 0.0
    t_ex: float = 0.0
    slack_x0: bool = False
    slack_xf: bool = False
    w_s0: np.ndarray | None = None
    w_sf: np.ndarray | None = None
    state_names: list | None = None
    control_names: list | None = None
    guess_tf: float | None = None
    guess_xf: list | None = None
    _frozen: bool = field(default=False, repr=False)

    def __post_init__(self):
        if self.x0_tol is None:
            self.x0_tol = np.zeros(self.n_st)
        if self.xf_tol is None:
            self.xf_tol = np.zeros(self.n_st)
        if self.w_s0 is None:
            self.w_s0 = np.full(self.n_st, 100.0)
        if self.w_sf is None:
            self.w_sf = np.full(self.n_st, 100.0)

    # -- building ----------------------------------------------------------

    def _mutable(self):
        if self._frozen:
            raise FrozenModel("model is frozen; copy it before modifying")

    def parse(self, text_or_expr) -> ex.Expr:
        if isinstance(text_or_expr, ex.Expr):
            e = text_or_expr
        else:
            e = ex.parse(str(text_or_expr), self.n_st, self.n_ctr)
        self._check_indices(e)
        return e

    def _check_indices(self, e: ex.Expr):
        for v in ex.sparsity(e):
            if v.kind in (ex.STATE, ex.STATE_INITIAL, ex.STATE_FINAL) and not 0 <= v.index < self.n_st:
                raise DimensionMismatch(f"{v.name} is out of range for {self.n_st} states")
            if v.kind == ex.CONTROL and not 0 <= v.index < self.n_ctr:
                raise DimensionMismatch(f"{v.name} is out of range for {self.n_ctr} controls")
            if v.kind == ex.PARAM:
                raise DimensionMismatch("model expressions cannot reference parameters")

    def set_dynamics(self, exprs) -> "OcpModel":
        self._mutable()
        exprs = list(exprs)
        if len(exprs) != self.n_st:
            raise DimensionMismatch(
                f"The number of differential equations must equal the number of states "
                f"({self.n_st}); got {len(exprs)}"
            )
        parsed = [self.parse(e) for e in exprs]
        for e in parsed:
            _reject_endpoints(e, "dynamics")
        self.dynamics = parsed
        return self

    def add_lagrange(self, e) -> "OcpModel":
        self._mutable()
        e = self.parse(e)
        _reject_endpoints(e, "Lagrange term")
        self.lagrange = e if self.lagrange is None else ex.add(self.lagrange, e)
        return self

    def set_mayer(self, e) -> "OcpModel":
        self._mutable()
        e = self.parse(e)
        bad = [v.name for v in ex.sparsity(e) if v.kind in (ex.STATE, ex.CONTROL, ex.TIME)]
        if bad:
            raise ModelError(
                f"Mayer term may only use endpoint symbols (x1_0, x1_f, ...) and tf; found {sorted(bad)}"
            )
        self.mayer = e
        return self

    def add_path_constraint(self, e, lower=-math.inf, upper=0.0) -> "OcpModel":
        self._mutable()
        e = self.parse(e)
        _reject_endpoints(e, "path constraint")
        lower = -math.inf if is_free(lower) or lower is None else float(lower)
        upper = math.inf if is_free(upper) or upper is None else float(upper)
        if lower > upper:
            raise InvertedBounds(f"path constraint bounds [{lower}, {upper}] are inverted")
        if math.isinf(lower) and math.isinf(upper):
            raise ModelError("path constraint needs at least one finite bound")
        self.path.append(PathConstraint(e, lower, upper))
        return self

    def set_tolerances(self, x0_tol=None, xf_tol=None) -> "OcpModel":
        self._mutable()
        if x0_tol is not None:
            self.x0_tol = _nonneg(x0_tol, self.n_st, "x0_tol")
        if xf_tol is not None:
            self.xf_tol = _nonneg(xf_tol, self.n_st, "xf_tol")
        return self

    def enable_slack(self, on_x0: bool = True, on_xf: bool = True, w_s0=None, w_sf=None) -> "OcpModel":
        self._mutable()
        self.slack_x0 = bool(on_x0)
        self.slack_xf = bool(on_xf)
        if w_s0 is not None:
            self.w_s0 = _weights(w_s0, self.n_st, "w_s0")
        if w_sf is not None:
            self.w_sf = _weights(w_sf, self.n_st, "w_sf")
        return self

    def configure(
        self,
        final_time_is_dv: bool | None = None,
        t_ex: float | None = None,
        t0: float | None = None,
        tf: float | None = None,
        tf_min: float | None = None,
        tf_max: float | None = None,
    ) -> "OcpModel":
        """Time settings; ``tf`` fixes the final time, ``final_time_is_dv`` frees it."""
        self._mutable()
        if t0 is not None:
            self.t0 = float(t0)
        if t_ex is not None:
            if t_ex < 0:
                raise ModelError("execution horizon must be nonnegative")
            self.t_ex = float(t_ex)
        if tf_min is not None:
            self.tf_min = float(tf_min)
        if tf_max is not None:
            self.tf_max = math.inf if is_free(tf_max) else float(tf_max)
        if tf is not None:
            self.tf_fixed = float(tf)
            self.final_time_is_dv = False
        if final_time_is_dv is not None:
            self.final_time_is_dv = bool(final_time_is_dv)
        return self

    def set_guess(self, tf=None, xf=None) -> "OcpModel":
        """Hints for the default initial guess (final time, final state)."""
        self._mutable()
        if tf is not None:
            self.guess_tf = float(tf)
        if xf is not None:
            self.guess_xf = _values(xf, self.n_st, "guess xf", FREE)
        return self

    # -- validation --------------------------------------------------------

    def validate(self):
        if self.dynamics is None:
            raise MissingDynamics("dynamics have not been set")
        if len(self.dynamics) != self.n_st:
            raise DimensionMismatch("The number of differential equations must equal the number of states")
        for lo, hi, name in ((self.x_min, self.x_max, "state"), (self.u_min, self.u_max, "control")):
            if np.any(lo > hi):
                raise InvertedBounds(f"{name} lower bound exceeds upper bound")
        for e in self.expressions():
            self._check_indices(e)
        if np.any(self.w_s0 < 0) or np.any(self.w_sf < 0):
            raise NegativeWeight("slack weights must be nonnegative")
        if self.final_time_is_dv:
            if not self.tf_min > 0:
                raise ModelError("tf_min must be positive when the final time is a design variable")
            if math.isinf(self.tf_max):
                raise UnboundedFinalTime("a free final time needs a finite upper bound")
            if self.tf_min > self.tf_max:
                raise InvertedBounds("tf_min exceeds tf_max")
        elif self.tf_fixed is None:
            raise ModelError("final time is neither fixed nor a design variable")
        for i in range(self.n_st):
            for value, tol, name in ((self.x0[i], self.x0_tol[i], "x0"), (self.xf[i], self.xf_tol[i], "xf")):
                if value is FREE:
                    continue
                lo, hi = value - tol, value + tol
                if hi < self.x_min[i] or lo > self.x_max[i]:
                    raise InvertedBounds(f"{name}[{i}] = {value} lies outside the state bounds")

    def expressions(self):
        out = list(self.dynamics or [])
        if self.lagrange is not None:
            out.append(self.lagrange)
        if self.mayer is not None:
            out.append(self.mayer)
        out += [p.expr for p in self.path]
        return out

    def freeze(self) -> "OcpModel":
        """Validated, immutable copy of the model."""
        self.validate()
        if self._frozen:
            return self
        frozen = copy.deepcopy(self)
        frozen._frozen = True
        for arr in (frozen.x_min, frozen.x_max, frozen.u_min, frozen.u_max, frozen.x0_tol, frozen.xf_tol,
                    frozen.w_s0, frozen.w_sf):
            arr.setflags(write=False)
        return frozen

    def copy(self) -> "OcpModel":
        """Mutable deep copy (also of a frozen model)."""
        out = copy.deepcopy(self)
        out._frozen = False
        for name in ("x_min", "x_max", "u_min", "u_max", "x0_tol", "xf_tol", "w_s0", "w_sf"):
            setattr(out, name, np.array(getattr(out, name), dtype=float))
        return out

    @property
    def frozen(self) -> bool:
        return self._frozen

    # -- helpers used by transcription --------------------------------------

    def boundary_arrays(self, which: str):
        """``(mask, value, tol)`` for the initial (``"x0"``) or final (``"xf"``) condition."""
        values = self.x0 if which == "x0" else self.xf
        tol = self.x0_tol if which == "x0" else self.xf_tol
        mask = np.array([v is not FREE for v in values])
        value = np.array([0.0 if v is FREE else v for v in values])
        return mask, value, np.asarray(tol, dtype=float)

    def tf_bounds(self) -> tuple[float, float]:
        if self.final_time_is_dv:
            return self.tf_min, self.tf_max
        return self.tf_fixed, self.tf_fixed

    def names(self):
        sn = self.state_names or [f"x{i + 1}" for i in range(self.n_st)]
        cn = self.control_names or [f"u{i + 1}" for i in range(self.n_ctr)]
        return sn, cn


def _reject_endpoints(e, what):
    bad = [v.name for v in ex.sparsity(e) if v.kind in (ex.STATE_INITIAL, ex.STATE_FINAL)]
    if bad:
        raise ModelError(f"{what} cannot use endpoint symbols {sorted(bad)}")


def _nonneg(values, n, name):
    arr = np.asarray(list(values), dtype=float)
    if arr.shape != (n,):
        raise DimensionMismatch(f"{name} needs {n} entries")
    if np.any(arr < 0):
        raise ModelError(f"{name} must be nonnegative")
    return arr


def _weights(values, n, name):
    arr = np.broadcast_to(np.asarray(values, dtype=float), (n,)).copy()
    if np.any(arr < 0):
        raise NegativeWeight(f"{name} must be nonnegative")
    return arr


def define(n_st: int, n_ctr: int, x0=None, xf=None, x_min=None, x_max=None, u_min=None, u_max=None) -> OcpModel:
    """Create a model shell with bounds and boundary conditions.

    Any entry may be ``FREE``.  Defaults: t0 = 0, t_ex = 0, zero tolerances,
    no slacks, no objective terms and a fixed (not yet given) final time.
    """
    if n_st < 1 or n_ctr < 0:
        raise DimensionMismatch("need at least one state and a nonnegative control count")
    x0v = _values(x0, n_st, "x0", FREE)
    xfv = _values(xf, n_st, "xf", FREE)
    model = OcpModel(
        n_st=n_st,
        n_ctr=n_ctr,
        x0=x0v,
        xf=xfv,
        x_min=_bounds(x_min, n_st, "x_min", -math.inf),
        x_max=_bounds(x_max, n_st, "x_max", math.inf),
        u_min=_bounds(u_min, n_ctr, "u_min", -math.inf),
        u_max=_bounds(u_max, n_ctr, "u_max", math.inf),
    )
    if np.any(model.x_min > model.x_max):
        raise InvertedBounds("state lower bound exceeds upper bound")
    if np.any(model.u_min > model.u_max):
        raise InvertedBounds("control lower bound exceeds upper bound")
    return model
