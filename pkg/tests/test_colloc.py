import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from numpy.polynomial import legendre as npleg

from ocpkit import colloc
from ocpkit.colloc import HGrid, LgrGrid, LgrInterval, Mesh


def oracle_nodes(n):
    """Roots of P_{n-1} + P_n from numpy's Legendre module."""
    c = np.zeros(n + 1)
    c[n - 1] = c[n] = 1.0
    return np.sort(npleg.legroots(c).real)


class TestLgrNodes:
    def test_one_point(self):
        tau, w = colloc.lgr_nodes(1)
        np.testing.assert_array_equal(tau, [-1.0])
        np.testing.assert_array_equal(w, [2.0])

    def test_two_points(self):
        tau, w = colloc.lgr_nodes(2)
        np.testing.assert_allclose(tau, [-1.0, 1.0 / 3.0], atol=1e-15)
        np.testing.assert_allclose(w, [0.5, 1.5], atol=1e-14)

    @pytest.mark.parametrize("n", [3, 7, 15, 30])
    def test_matches_independent_roots(self, n):
        tau, _ = colloc.lgr_nodes(n)
        np.testing.assert_allclose(tau, oracle_nodes(n), atol=1e-12)

    @pytest.mark.parametrize("n", [5, 12, 30])
    def test_weights_match_moment_fit(self, n):
        tau, w = colloc.lgr_nodes(n)
        # solve V^T w = moments on a Legendre basis for conditioning
        V = npleg.legvander(tau, n - 1)
        moments = np.zeros(n)
        moments[0] = 2.0
        np.testing.assert_allclose(w, np.linalg.solve(V.T, moments), atol=1e-12)

    @pytest.mark.parametrize("n", [1, 2, 10, 40, 100])
    def test_weights_sum_to_two(self, n):
        _, w = colloc.lgr_nodes(n)
        assert abs(w.sum() - 2.0) <= 1e-13

    @pytest.mark.parametrize("n", range(2, 41))
    def test_quadrature_exact_to_degree_2n_minus_2(self, n):
        tau, w = colloc.lgr_nodes(n)
        for k in range(2 * n - 1):
            exact = (1.0 - (-1.0) ** (k + 1)) / (k + 1)
            assert abs(w @ tau**k - exact) < 1e-11

    @pytest.mark.parametrize("n", range(1, 101, 9))
    def test_first_node_and_interior(self, n):
        tau, _ = colloc.lgr_nodes(n)
        assert tau[0] == -1.0
        assert np.all((tau[1:] > -1.0) & (tau[1:] < 1.0))
        assert np.all(np.diff(tau) > 0)

    def test_rejects_zero(self):
        with pytest.raises(ValueError):
            colloc.lgr_nodes(0)


class TestDiffMatrix:
    @pytest.mark.parametrize("n", [1, 2, 5, 20])
    def test_constant_and_linear(self, n):
        itv = LgrInterval.build(n)
        assert itv.D.shape == (n, n + 1)
        assert np.max(np.abs(itv.D @ np.ones(n + 1))) < 1e-12
        assert np.max(np.abs(itv.D @ itv.tau_aug - 1.0)) < 1e-11

    def test_monomial_degree_nine(self):
        itv = LgrInterval.build(10)
        got = itv.D @ itv.tau_aug**9
        exact = 9.0 * itv.tau**8
        np.testing.assert_allclose(got, exact, rtol=1e-9, atol=1e-12)

    @pytest.mark.parametrize("n", [3, 10, 25, 40])
    def test_exact_up_to_degree_n(self, n):
        itv = LgrInterval.build(n)
        for k in range(n + 1):
            got = itv.D @ itv.tau_aug**k
            exact = k * itv.tau ** max(k - 1, 0) if k else np.zeros(n)
            scale = max(1.0, np.max(np.abs(exact)))
            assert np.max(np.abs(got - exact)) / scale < 1e-9

    def test_duplicate_nodes(self):
        with pytest.raises(colloc.DuplicateNodes):
            colloc.lgr_diff_matrix([-1.0, 0.0, 0.0, 1.0])

    def test_last_point_not_collocated(self):
        itv = LgrInterval.build(4)
        assert itv.tau_aug[-1] == 1.0
        assert itv.D.shape[0] == len(itv.tau)


class TestTimeMap:
    def test_endpoints_and_midpoint(self):
        assert colloc.time_map(-1, 0, 0, 4) == 0.0
        assert colloc.time_map(1, 0, 0.2, 4) == 4.0
        assert colloc.time_map(0, 0, 0.2, 4) == pytest.approx(2.1)

    def test_degenerate(self):
        with pytest.raises(colloc.DegenerateSpan):
            colloc.time_map(0, 1.0, 0.5, 1.5)


class TestHGrid:
    def test_spacing(self):
        g = HGrid.build(11, 0.0, 0.2, 2.2)
        assert g.h == pytest.approx(0.2)
        assert np.max(np.abs(np.diff(g.T) - g.h)) < 1e-12
        assert g.T[0] == 0.2 and g.T[-1] == 2.2

    def test_needs_two_points(self):
        with pytest.raises(ValueError):
            HGrid.build(1, 0, 0, 1)


class TestResiduals:
    def test_equilibrium(self):
        T = np.linspace(0, 1, 5)
        X = np.full((5, 2), 3.0)
        eta = colloc.euler_residual(X, np.zeros((5, 1)), T, lambda x, u, t: np.zeros(2))
        np.testing.assert_array_equal(eta, 0.0)

    def test_linear_exact(self):
        T = np.linspace(0, 2, 7)
        for fn in (colloc.euler_residual, colloc.trapezoid_residual):
            eta = fn(T.copy(), np.zeros(7), T, lambda x, u, t: 1.0)
            np.testing.assert_allclose(eta, 0.0, atol=1e-15)

    def test_euler_hand_value(self):
        eta = colloc.euler_residual([1.0, 2.0], [0.0, 0.0], [0.0, 1.0], lambda x, u, t: x)
        np.testing.assert_array_equal(eta, [[-1.0]])

    def test_trapezoid_hand_value(self):
        eta = colloc.trapezoid_residual([1.0, 2.0], [0.0, 0.0], [0.0, 1.0], lambda x, u, t: x)
        np.testing.assert_array_equal(eta, [[-0.5]])

    def test_trapezoid_exact_for_linear_integrand(self):
        T = np.linspace(0, 3, 9)
        eta = colloc.trapezoid_residual(T**2 / 2, np.zeros(9), T, lambda x, u, t: t)
        np.testing.assert_allclose(eta, 0.0, atol=1e-14)


class TestQuadrature:
    @pytest.mark.parametrize("method", ["euler", "trapezoid"])
    def test_unit_integrand(self, method):
        N = 11
        assert colloc.h_cost(np.ones(N), 1.0 / (N - 1), method) == pytest.approx(1.0)

    def test_zero_integrand(self):
        assert colloc.h_cost(np.zeros(5), 0.25, "trapezoid") == 0.0

    def test_lgr_unit_integrand(self):
        mesh = Mesh(np.array([-1.0, -0.2, 0.5, 1.0]), (3, 5, 2))
        grid = LgrGrid.build(mesh)
        L = [np.ones(n) for n in mesh.Ns]
        w = [itv.w for itv in grid.intervals]
        assert colloc.lgr_cost(L, mesh, w, 0.0, 0.2, 4.0) == pytest.approx(3.8)

    def test_lgr_zero_integrand(self):
        mesh = Mesh.uniform(2, 4)
        grid = LgrGrid.build(mesh)
        assert colloc.lgr_cost([np.zeros(4)] * 2, mesh, [i.w for i in grid.intervals], 0, 0, 1) == 0.0

    def test_lgr_quadratic_on_mapped_span(self):
        # L = tau^2 on t in [0, 2] equals (t - 1)^2; the integral is 2/3
        mesh = Mesh.uniform(1, 5)
        grid = LgrGrid.build(mesh)
        itv = grid.intervals[0]
        assert colloc.lgr_cost([itv.tau**2], mesh, [itv.w], 0.0, 0.0, 2.0) == pytest.approx(2.0 / 3.0, abs=1e-14)


class TestMesh:
    def test_shared_points(self):
        for K in (1, 2, 5):
            grid = LgrGrid.build(Mesh.uniform(K, 4))
            assert grid.n_state_points == 4 * K + 1
            assert grid.n_control_points == 4 * K
            # each interval's last point is the next interval's first
            off = grid.offsets
            assert len(np.unique(off[1:-1])) == K - 1

    def test_state_tau_covers_interval(self):
        grid = LgrGrid.build(Mesh.uniform(3, 4))
        tau = grid.state_tau()
        assert tau[0] == -1.0 and tau[-1] == 1.0
        assert np.all(np.diff(tau) > 0)
        np.testing.assert_allclose(tau[grid.offsets[:-1]], grid.mesh.M[:-1])

    def test_quadrature_weights_sum(self):
        grid = LgrGrid.build(Mesh(np.array([-1.0, 0.1, 1.0]), (6, 3)))
        assert grid.quadrature_weights().sum() == pytest.approx(2.0, abs=1e-13)

    @pytest.mark.parametrize("M,Ns", [([-1.0, 1.0, 0.5], (2, 2)), ([-0.9, 1.0], (2,)), ([-1.0, 1.0], (0,)),
                                      ([-1.0, 0.0, 1.0], (3,))])
    def test_invalid(self, M, Ns):
        with pytest.raises(ValueError):
            Mesh(np.array(M), Ns)


class TestInterpolation:
    @settings(max_examples=40, deadline=None)
    @given(st.integers(2, 12), st.integers(0, 10**6))
    def test_reproduces_polynomials(self, n, seed):
        r = np.random.default_rng(seed)
        nodes = np.sort(r.uniform(-1, 1, n)) + np.arange(n) * 1e-3
        c = r.normal(size=n)
        x = r.uniform(nodes[0], nodes[-1], 7)
        got = colloc.barycentric_interpolate(nodes, np.polyval(c, nodes), x)
        np.testing.assert_allclose(got, np.polyval(c, x), rtol=1e-6, atol=1e-6)

    def test_exact_at_nodes(self):
        nodes = np.array([-1.0, -0.3, 0.4, 1.0])
        vals = np.array([3.0, -1.0, 2.0, 5.0])
        np.testing.assert_array_equal(colloc.barycentric_interpolate(nodes, vals, nodes), vals)
