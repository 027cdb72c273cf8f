"""The NLP interface shared by transcriptions and solvers.

Problems have the form::

    minimize f(z)  subject to  h(z) = 0,  g(z) <= 0,  lb <= z <= ub

Constraint rows are ordered equalities first, then inequalities.  Derivatives
are exchanged in coordinate form: the Jacobian of the stacked constraints
and the lower triangle of the Lagrangian Hessian
``obj_factor * grad^2 f + sum_i lam_i grad^2 c_i``.
"""

from __future__ import annotations

from typing import Callable

import numpy as np


class NlpProblem:
    n: int
    n_eq: int
    n_ineq: int
    lb: np.ndarray
    ub: np.ndarray

    @property
    def m(self) -> int:
        return self.n_eq + self.n_ineq

    def objective(self, z: np.ndarray) -> float:
        raise NotImplementedError

    def gradient(self, z: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def eq(self, z: np.ndarray) -> np.ndarray:
        return self.constraints(z)[: self.n_eq]

    def ineq(self, z: np.ndarray) -> np.ndarray:
        return self.constraints(z)[self.n_eq :]

    def constraints(self, z: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def jacobian_structure(self) -> tuple[np.ndarray, np.ndarray]:
        raise NotImplementedError

    def jacobian(self, z: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def hessian_structure(self) -> tuple[np.ndarray, np.ndarray]:
        raise NotImplementedError

    def hessian(self, z: np.ndarray, lam: np.ndarray, obj_factor: float = 1.0) -> np.ndarray:
        raise NotImplementedError

    # dense conveniences

    def jacobian_dense(self, z: np.ndarray) -> np.ndarray:
        rows, cols = self.jacobian_structure()
        J = np.zeros((self.m, self.n))
        np.add.at(J, (rows, cols), self.jacobian(z))
        return J

    def hessian_dense(self, z: np.ndarray, lam: np.ndarray, obj_factor: float = 1.0) -> np.ndarray:
        rows, cols = self.hessian_structure()
        vals = self.hessian(z, lam, obj_factor)
        H = np.zeros((self.n, self.n))
        np.add.at(H, (rows, cols), vals)
        off = rows != cols
        np.add.at(H, (cols[off], rows[off]), vals[off])
        return H


class FunctionNlp(NlpProblem):
    """Small dense problem defined by Python callables.

    ``eq``/``ineq`` return arrays; their Jacobians return dense matrices and
    ``eq_hess``/``ineq_hess`` return ``sum_i lam_i grad^2 c_i`` as a dense matrix.
    Missing callables mean no constraints of that kind.
    """

    def __init__(
        self,
        n: int,
        f: Callable,
        grad: Callable,
        hess: Callable,
        lb=None,
        ub=None,
        eq: Callable | None = None,
        eq_jac: Callable | None = None,
        eq_hess: Callable | None = None,
        n_eq: int = 0,
        ineq: Callable | None = None,
        ineq_jac: Callable | None = None,
        ineq_hess: Callable | None = None,
        n_ineq: int = 0,
    ):
        self.n = n
        self.n_eq = n_eq
        self.n_ineq = n_ineq
        self._f, self._grad, self._hess = f, grad, hess
        self._eq, self._eq_jac, self._eq_hess = eq, eq_jac, eq_hess
        self._ineq, self._ineq_jac, self._ineq_hess = ineq, ineq_jac, ineq_hess
        self.lb = np.full(n, -np.inf) if lb is None else np.asarray(lb, dtype=float)
        self.ub = np.full(n, np.inf) if ub is None else np.asarray(ub, dtype=float)
        rr, cc = np.meshgrid(np.arange(self.m), np.arange(n), indexing="ij")
        self._jrows, self._jcols = rr.ravel(), cc.ravel()
        hr, hc = np.tril_indices(n)
        self._hrows, self._hcols = hr, hc

    def objective(self, z):
        return float(self._f(z))

    def gradient(self, z):
        return np.asarray(self._grad(z), dtype=float)

    def constraints(self, z):
        parts = []
        if self.n_eq:
            parts.append(np.atleast_1d(self._eq(z)))
        if self.n_ineq:
            parts.append(np.atleast_1d(self._ineq(z)))
        return np.concatenate(parts).astype(float) if parts else np.zeros(0)

    def jacobian_structure(self):
        return self._jrows, self._jcols

    def jacobian(self, z):
        parts = []
        if self.n_eq:
            parts.append(np.atleast_2d(self._eq_jac(z)))
        if self.n_ineq:
            parts.append(np.atleast_2d(self._ineq_jac(z)))
        if not parts:
            return np.zeros(0)
        return np.vstack(parts).astype(float).ravel()

    def hessian_structure(self):
        return self._hrows, self._hcols

    def hessian(self, z, lam, obj_factor=1.0):
        H = obj_factor * np.atleast_2d(self._hess(z)).astype(float)
        if self.n_eq:
            H = H + np.atleast_2d(self._eq_hess(z, lam[: self.n_eq]))
        if self.n_ineq:
            H = H + np.atleast_2d(self._ineq_hess(z, lam[self.n_eq :]))
        return H[self._hrows, self._hcols]
