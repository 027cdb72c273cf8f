"""Time grids, Legendre-Gauss-Radau nodes and the discrete collocation formulas."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np


class ConvergenceFailure(RuntimeError):
    pass


class DuplicateNodes(ValueError):
    pass


class DegenerateSpan(ValueError):
    pass


EULER = "euler"
TRAPEZOID = "trapezoid"
LGR = "lgr"
H_METHODS = (EULER, TRAPEZOID)
METHODS = (EULER, TRAPEZOID, LGR)


# ---------------------------------------------------------------------------
# Legendre polynomials and LGR points


def legendre(n: int, x):
    """Return ``(P_n(x), P_{n-1}(x), P_n'(x))`` by the three-term recurrence."""
    x = np.asarray(x, dtype=float)
    p_prev = np.ones_like(x)
    if n == 0:
        return p_prev, np.zeros_like(x), np.zeros_like(x)
    p = x.copy()
    dp_prev = np.zeros_like(x)
    dp = np.ones_like(x)
    for k in range(1, n):
        p_next = ((2 * k + 1) * x * p - k * p_prev) / (k + 1)
        dp_next = dp_prev + (2 * k + 1) * p
        p_prev, p = p, p_next
        dp_prev, dp = dp, dp_next
    return p, p_prev, dp


def _radau_function(n: int, x):
    # P_{n-1} + P_n and its derivative
    pn, pn1, dpn = legendre(n, x)
    if n == 1:
        return pn + pn1, dpn
    _, _, dpn1 = legendre(n - 1, x)
    return pn + pn1, dpn + dpn1


@lru_cache(maxsize=256)
def _lgr_nodes_cached(n: int):
    if n < 1:
        raise ValueError("need at least one LGR node")
    if n == 1:
        return np.array([-1.0]), np.array([2.0])
    j = np.arange(1, n)
    # Chebyshev-Gauss-Radau points as the starting guess
    tau = -np.cos(2.0 * np.pi * j / (2 * n - 1))
    for _ in range(100):
        f, df = _radau_function(n, tau)
        step = f / df
        tau = tau - step
        if np.max(np.abs(step)) < 1e-15:
            break
    f, _ = _radau_function(n, tau)
    # scale the residual check by the polynomial's size near each root
    if np.max(np.abs(f)) > 1e-13 * max(1.0, n / 10.0):
        raise ConvergenceFailure(f"LGR Newton iteration did not converge for N={n}")
    tau = np.concatenate(([-1.0], np.sort(tau)))
    _, p_prev, _ = legendre(n - 1, tau[1:])
    w = np.empty(n)
    w[0] = 2.0 / n**2
    w[1:] = (1.0 - tau[1:]) / (n**2 * legendre(n - 1, tau[1:])[0] ** 2)
    tau.setflags(write=False)
    w.setflags(write=False)
    return tau, w


def lgr_nodes(n: int) -> tuple[np.ndarray, np.ndarray]:
    """LGR nodes on [-1, 1) (``tau[0] == -1``) and their quadrature weights.

    The nodes are the roots of ``P_{n-1} + P_n``; weights are
    ``2/n^2`` at -1 and ``(1 - tau)/(n^2 P_{n-1}(tau)^2)`` elsewhere.
    """
    tau, w = _lgr_nodes_cached(int(n))
    return tau.copy(), w.copy()


def barycentric_weights(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    diff = x[:, None] - x[None, :]
    np.fill_diagonal(diff, 1.0)
    if np.any(diff == 0.0):
        raise DuplicateNodes("interpolation nodes must be distinct")
    # product in scaled form to avoid overflow for large node counts
    scale = 4.0 / (x.max() - x.min()) if x.size > 1 else 1.0
    w = 1.0 / np.prod(diff * scale, axis=1)
    return w / np.max(np.abs(w))


def lgr_diff_matrix(tau_aug) -> np.ndarray:
    """Differentiation matrix ``D[i, j] = L_j'(tau_aug[i])`` for the collocated rows.

    ``tau_aug`` holds the N collocation points followed by the noncollocated
    endpoint; the result has shape ``(N, N + 1)``.
    """
    x = np.asarray(tau_aug, dtype=float)
    if x.ndim != 1 or x.size < 2:
        raise ValueError("need at least two augmented nodes")
    if np.any(np.diff(x) <= 0):
        if np.any(np.diff(x) == 0):
            raise DuplicateNodes("augmented nodes contain duplicates")
        raise ValueError("augmented nodes must be strictly increasing")
    w = barycentric_weights(x)
    diff = x[:, None] - x[None, :]
    np.fill_diagonal(diff, 1.0)
    d = (w[None, :] / w[:, None]) / diff
    np.fill_diagonal(d, 0.0)
    np.fill_diagonal(d, -d.sum(axis=1))
    return d[:-1, :]


def barycentric_interpolate(nodes, values, x) -> np.ndarray:
    """Evaluate the interpolating polynomial through ``(nodes, values)`` at ``x``.

    ``values`` may carry trailing channels (shape ``(len(nodes), m)``).
    """
    nodes = np.asarray(nodes, dtype=float)
    values = np.asarray(values, dtype=float)
    x = np.atleast_1d(np.asarray(x, dtype=float))
    w = barycentric_weights(nodes)
    diff = x[:, None] - nodes[None, :]
    exact = diff == 0.0
    with np.errstate(divide="ignore", invalid="ignore"):
        kernel = w[None, :] / diff
        denom = kernel.sum(axis=1)
        if values.ndim == 1:
            out = (kernel @ values) / denom
        else:
            out = (kernel @ values) / denom[:, None]
    hit_rows, hit_cols = np.nonzero(exact)
    out[hit_rows] = values[hit_cols]
    return out


# ---------------------------------------------------------------------------
# time maps and grids


def time_map(tau, t0: float, t_ex: float, tf: float):
    """Affine map of ``tau`` in [-1, 1] onto [t0 + t_ex, tf]."""
    if not tf > t0 + t_ex:
        raise DegenerateSpan(f"final time {tf} must exceed t0 + t_ex = {t0 + t_ex}")
    return 0.5 * (tf - t0 - t_ex) * np.asarray(tau) + 0.5 * (tf + t0 + t_ex)


@dataclass(frozen=True)
class HGrid:
    """``N`` evenly spaced points on [t0 + t_ex, tf]; ``h`` is the spacing (s)."""

    N: int
    T: np.ndarray
    h: float

    @classmethod
    def build(cls, N: int, t0: float, t_ex: float, tf: float) -> "HGrid":
        if N < 2:
            raise ValueError("an h-grid needs at least two points")
        if not tf > t0 + t_ex:
            raise DegenerateSpan(f"final time {tf} must exceed t0 + t_ex = {t0 + t_ex}")
        h = (tf - t0 - t_ex) / (N - 1)
        T = t0 + t_ex + h * np.arange(N)
        T[-1] = tf
        return cls(N, T, h)

    @staticmethod
    def fractions(N: int) -> np.ndarray:
        """Position of each point as a fraction of the span, in [0, 1]."""
        return np.arange(N) / (N - 1)


@dataclass(frozen=True)
class Mesh:
    """Interval boundaries ``M`` on [-1, 1] and collocation counts ``Ns`` per interval."""

    M: np.ndarray
    Ns: tuple

    def __post_init__(self):
        M = np.asarray(self.M, dtype=float)
        object.__setattr__(self, "M", M)
        object.__setattr__(self, "Ns", tuple(int(n) for n in self.Ns))
        if M.ndim != 1 or M.size < 2:
            raise ValueError("mesh needs at least one interval")
        if M[0] != -1.0 or M[-1] != 1.0:
            raise ValueError("mesh must start at -1 and end at +1")
        if np.any(np.diff(M) <= 0):
            raise ValueError("mesh points must be strictly increasing")
        if len(self.Ns) != M.size - 1:
            raise ValueError("need one node count per mesh interval")
        if min(self.Ns) < 1:
            raise ValueError("each interval needs at least one collocation point")

    @classmethod
    def uniform(cls, K: int, N) -> "Mesh":
        Ns = (int(N),) * K if np.isscalar(N) else tuple(N)
        M = np.linspace(-1.0, 1.0, K + 1)
        M[0], M[-1] = -1.0, 1.0
        return cls(M, Ns)

    @property
    def K(self) -> int:
        return len(self.Ns)


@dataclass(frozen=True)
class LgrInterval:
    tau: np.ndarray
    tau_aug: np.ndarray
    w: np.ndarray
    D: np.ndarray

    @classmethod
    def build(cls, N: int) -> "LgrInterval":
        tau, w = lgr_nodes(N)
        tau_aug = np.append(tau, 1.0)
        return cls(tau, tau_aug, w, lgr_diff_matrix(tau_aug))


@dataclass(frozen=True)
class LgrGrid:
    """A mesh with its per-interval LGR data and the global point numbering.

    State points are numbered ``0 .. sum(Ns)``; interval ``k`` uses state
    points ``offsets[k] .. offsets[k] + Ns[k]``, so its last point is the
    first point of interval ``k + 1``.  Controls live on the ``sum(Ns)``
    collocation points only.
    """

    mesh: Mesh
    intervals: tuple = field(default=())

    @classmethod
    def build(cls, mesh: Mesh) -> "LgrGrid":
        return cls(mesh, tuple(LgrInterval.build(n) for n in mesh.Ns))

    @property
    def offsets(self) -> np.ndarray:
        return np.concatenate(([0], np.cumsum(self.mesh.Ns)))

    @property
    def n_state_points(self) -> int:
        return int(sum(self.mesh.Ns)) + 1

    @property
    def n_control_points(self) -> int:
        return int(sum(self.mesh.Ns))

    def state_tau(self) -> np.ndarray:
        """Global tau of every state point (collocation points plus the final +1)."""
        out = []
        M = self.mesh.M
        for k, itv in enumerate(self.intervals):
            out.append(M[k] + 0.5 * (M[k + 1] - M[k]) * (itv.tau + 1.0))
        out.append([1.0])
        return np.concatenate(out)

    def control_tau(self) -> np.ndarray:
        return self.state_tau()[:-1]

    def quadrature_weights(self) -> np.ndarray:
        """``(M_k - M_{k-1})/2 * w_j`` for every collocation point; sums to 2."""
        M = self.mesh.M
        return np.concatenate([0.5 * (M[k + 1] - M[k]) * itv.w for k, itv in enumerate(self.intervals)])

    def interval_of_point(self) -> np.ndarray:
        return np.repeat(np.arange(self.mesh.K), self.mesh.Ns)


# ---------------------------------------------------------------------------
# discrete residuals and quadrature


def _rows(F, X, U, T):
    return np.array([np.atleast_1d(F(X[i], U[i], T[i])) for i in range(len(T))], dtype=float)


def euler_residual(X, U, T, F) -> np.ndarray:
    """Backward-Euler defects ``X[i+1] - X[i] - h F(X[i+1], U[i+1], T[i+1])``."""
    X = np.asarray(X, dtype=float).reshape(len(T), -1)
    U = np.asarray(U, dtype=float).reshape(len(T), -1)
    T = np.asarray(T, dtype=float)
    h = np.diff(T)[:, None]
    f = _rows(F, X, U, T)
    return X[1:] - X[:-1] - h * f[1:]


def trapezoid_residual(X, U, T, F) -> np.ndarray:
    """Trapezoidal defects ``X[i+1] - X[i] - h/2 (F_i + F_{i+1})``."""
    X = np.asarray(X, dtype=float).reshape(len(T), -1)
    U = np.asarray(U, dtype=float).reshape(len(T), -1)
    T = np.asarray(T, dtype=float)
    h = np.diff(T)[:, None]
    f = _rows(F, X, U, T)
    return X[1:] - X[:-1] - 0.5 * h * (f[:-1] + f[1:])


def h_weights(N: int, method: str) -> np.ndarray:
    """Per-point quadrature weights in units of ``h`` for the panel rules.

    Backward Euler sums the right end of each of the N-1 panels; the
    trapezoid averages both ends.
    """
    w = np.ones(N)
    if method == EULER:
        w[0] = 0.0
    elif method == TRAPEZOID:
        w[0] = w[-1] = 0.5
    else:
        raise ValueError(f"not an h-method: {method}")
    return w


def h_cost(L_values, h: float, method: str) -> float:
    L_values = np.asarray(L_values, dtype=float)
    return float(h * np.dot(h_weights(L_values.size, method), L_values))


def lgr_cost(L_values, mesh: Mesh, weights, t0: float, t_ex: float, tf: float) -> float:
    """Radau quadrature of the Lagrange term over [t0 + t_ex, tf].

    ``L_values`` and ``weights`` are sequences with one array per interval.
    """
    total = 0.0
    for k, (Lk, wk) in enumerate(zip(L_values, weights)):
        total += 0.5 * (mesh.M[k + 1] - mesh.M[k]) * float(np.dot(wk, Lk))
    return 0.5 * (tf - t0 - t_ex) * total
