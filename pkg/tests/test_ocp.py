import math
from importlib import resources

import numpy as np
import pytest

import ocpkit.expr as ex
from ocpkit import ocp, problems
from ocpkit.ocp import FREE, define
from ocpkit.problemfile import ProblemFileError, load_problem, parse_problem

MOON_FILE = """
[problem]  states=2 controls=1 t0=0 tex=0
[dynamics] x1' = x2
           x2' = u1 - 1.5
[objective] lagrange = u1
[bounds]   x1 in [0,20]; x2 in [-20,20]; u1 in [0,3]; tf in [0.001,400] free
[boundary] x(0) = 10,-2 tol 0,0 ; x(tf) = 0,0 tol 0,0
[slack]    x0 = off ; xf = off
"""


def data_text(name):
    return resources.files("ocpkit").joinpath("data", name).read_text()


def same_expr_values(a, b, n_st, n_ctr, seed=0):
    r = np.random.default_rng(seed)
    for _ in range(5):
        env = ex.EvalEnv(x=r.uniform(0.5, 2, n_st), u=r.uniform(-0.4, 0.4, n_ctr), t=0.3, tf=2.0,
                         x_initial=r.uniform(0.5, 2, n_st), x_final=r.uniform(0.5, 2, n_st))
        assert ex.eval(a, env) == pytest.approx(ex.eval(b, env), rel=1e-12, abs=1e-12)


def assert_models_match(a, b):
    assert (a.n_st, a.n_ctr) == (b.n_st, b.n_ctr)
    assert a.x0 == b.x0 and a.xf == b.xf
    for name in ("x_min", "x_max", "u_min", "u_max", "x0_tol", "xf_tol", "w_s0", "w_sf"):
        np.testing.assert_allclose(getattr(a, name), getattr(b, name), rtol=1e-12, err_msg=name)
    assert a.tf_bounds() == pytest.approx(b.tf_bounds())
    assert a.final_time_is_dv == b.final_time_is_dv
    assert (a.slack_x0, a.slack_xf) == (b.slack_x0, b.slack_xf)
    assert a.t_ex == b.t_ex and a.t0 == b.t0
    for ea, eb in zip(a.dynamics, b.dynamics):
        same_expr_values(ea, eb, a.n_st, a.n_ctr)
    for term in ("lagrange", "mayer"):
        ta, tb = getattr(a, term), getattr(b, term)
        assert (ta is None) == (tb is None)
        if ta is not None:
            same_expr_values(ta, tb, a.n_st, a.n_ctr)
    assert len(a.path) == len(b.path)
    for pa, pb in zip(a.path, b.path):
        same_expr_values(pa.expr, pb.expr, a.n_st, a.n_ctr)
        assert (pa.lower, pa.upper) == (pb.lower, pb.upper)


class TestDefine:
    def test_bryson_shell(self):
        m = define(2, 1, x0=[0, 1], xf=[0, -1], x_max=[1 / 12, FREE])
        assert m.x0 == [0.0, 1.0] and m.xf == [0.0, -1.0]
        assert m.x_max[0] == pytest.approx(1 / 12) and math.isinf(m.x_max[1])
        assert np.all(np.isinf(m.u_min)) and np.all(np.isinf(m.u_max))

    def test_moon_shell_defaults(self):
        m = define(2, 1, x0=[10, -2], xf=[0, 0], x_min=[0, -20], x_max=[20, 20], u_min=[0], u_max=[3])
        assert m.t0 == 0 and m.t_ex == 0
        np.testing.assert_array_equal(m.x0_tol, 0.0)
        np.testing.assert_array_equal(m.xf_tol, 0.0)
        assert not m.slack_x0 and not m.slack_xf
        assert m.lagrange is None and m.mayer is None
        assert not m.final_time_is_dv

    def test_all_free(self):
        m = define(1, 1)
        assert m.x0 == [FREE] and m.xf == [FREE]
        assert np.isinf(m.x_min[0]) and np.isinf(m.x_max[0])
        assert np.isinf(m.u_min[0]) and np.isinf(m.u_max[0])

    def test_free_spelled_as_text(self):
        m = define(2, 0, x0=["free", 1.0])
        assert m.x0[0] is FREE

    def test_dimension_mismatch(self):
        with pytest.raises(ocp.DimensionMismatch):
            define(2, 1, x0=[0.0])

    def test_inverted_bounds(self):
        with pytest.raises(ocp.InvertedBounds):
            define(1, 1, x_min=[2.0], x_max=[1.0])
        with pytest.raises(ocp.InvertedBounds):
            define(1, 1, u_min=[1.0], u_max=[-1.0])


class TestBuilding:
    def test_dynamics_count_message(self):
        m = define(2, 1)
        with pytest.raises(ocp.DimensionMismatch, match="The number of differential equations must equal"):
            m.set_dynamics(["x2"])

    def test_moon_lander_dynamics(self):
        m = problems.moon_lander()
        env = ex.EvalEnv(x=[10, -2], u=[3.0])
        assert [ex.eval(e, env) for e in m.dynamics] == [-2.0, 1.5]

    def test_lagrange_terms_add(self):
        m = define(1, 1).set_dynamics(["u1"]).add_lagrange("u1").add_lagrange("x1^2")
        assert ex.eval(m.lagrange, ex.EvalEnv(x=[2.0], u=[3.0])) == 7.0

    def test_out_of_range_reference(self):
        m = define(2, 1)
        with pytest.raises(ocp.DimensionMismatch):
            m.add_lagrange(ex.Var(ex.STATE, 4))
        with pytest.raises(ex.UnknownVariable):
            m.add_lagrange("x3")

    def test_mayer_only_endpoints(self):
        m = define(1, 1)
        m.set_mayer("x1_f^2 + tf")
        with pytest.raises(ocp.ModelError):
            m.set_mayer("x1^2")

    def test_dynamics_reject_endpoint_symbols(self):
        with pytest.raises(ocp.ModelError):
            define(1, 0).set_dynamics(["x1_f"])

    def test_path_bounds(self):
        m = define(1, 1)
        with pytest.raises(ocp.InvertedBounds):
            m.add_path_constraint("x1", 1.0, 0.0)
        with pytest.raises(ocp.ModelError):
            m.add_path_constraint("x1", FREE, FREE)
        m.add_path_constraint("x1", 0.0, FREE)
        assert m.path[0].lower == 0.0 and math.isinf(m.path[0].upper)

    def test_tolerances(self):
        m = problems.moon_lander().set_tolerances(x0_tol=[0.01, 0.005], xf_tol=[0.01, 0.005])
        np.testing.assert_array_equal(m.x0_tol, [0.01, 0.005])
        with pytest.raises(ocp.ModelError):
            m.set_tolerances(x0_tol=[-1.0, 0.0])

    def test_slack_weights(self):
        m = problems.moon_lander().enable_slack(True, True)
        np.testing.assert_array_equal(m.w_s0, [100.0, 100.0])
        m.enable_slack(True, False, w_s0=[5.0, 7.0])
        np.testing.assert_array_equal(m.w_s0, [5.0, 7.0])
        with pytest.raises(ocp.NegativeWeight):
            m.enable_slack(True, True, w_sf=-1.0)

    def test_negative_execution_horizon(self):
        with pytest.raises(ocp.ModelError):
            define(1, 0).configure(t_ex=-0.1)


class TestValidation:
    def test_missing_dynamics(self):
        with pytest.raises(ocp.MissingDynamics):
            define(1, 1).configure(tf=1.0).freeze()

    def test_free_final_time_needs_upper_bound(self):
        m = define(1, 1).set_dynamics(["u1"]).configure(final_time_is_dv=True)
        with pytest.raises(ocp.UnboundedFinalTime):
            m.freeze()

    def test_tf_min_positive(self):
        m = define(1, 1).set_dynamics(["u1"]).configure(final_time_is_dv=True, tf_min=0.0, tf_max=2.0)
        with pytest.raises(ocp.ModelError):
            m.freeze()

    def test_boundary_outside_bounds(self):
        m = define(1, 1, x0=[5.0], x_max=[1.0]).set_dynamics(["u1"]).configure(tf=1.0)
        with pytest.raises(ocp.InvertedBounds):
            m.freeze()

    def test_time_unset(self):
        with pytest.raises(ocp.ModelError):
            define(1, 1).set_dynamics(["u1"]).freeze()

    def test_library_problems_validate(self):
        for build in problems.PROBLEMS.values():
            assert build().freeze().frozen


class TestFreeze:
    def test_frozen_is_immutable(self):
        f = problems.moon_lander().freeze()
        with pytest.raises(ocp.FrozenModel):
            f.add_lagrange("u1")
        with pytest.raises(ValueError):
            f.x_max[0] = 3.0

    def test_freeze_leaves_original_mutable(self):
        m = problems.moon_lander()
        m.freeze()
        m.add_lagrange("u1")

    def test_copy_is_mutable_and_independent(self):
        f = problems.moon_lander().freeze()
        c = f.copy()
        c.x_max[0] = 30.0
        c.set_tolerances(x0_tol=[0.1, 0.1])
        assert f.x_max[0] == 20.0
        np.testing.assert_array_equal(f.x0_tol, 0.0)

    def test_boundary_arrays(self):
        m = problems.kinematic_bicycle()
        mask, value, tol = m.boundary_arrays("xf")
        assert not mask.any()
        mask, value, _ = m.boundary_arrays("x0")
        assert mask.all()
        assert value[2] == pytest.approx(math.pi / 2)


class TestProblemFile:
    def test_moon_lander_inline(self):
        assert_models_match(parse_problem(MOON_FILE), problems.moon_lander())

    @pytest.mark.parametrize("name,build", [("moonlander.ocp", problems.moon_lander),
                                            ("bryson.ocp", problems.bryson_denham),
                                            ("bicycle.ocp", problems.kinematic_bicycle),
                                            ("moonlander_mpc.ocp", None)])
    def test_shipped_files(self, name, build):
        m = parse_problem(data_text(name))
        if build is None:
            ref = problems.moon_lander_mpc()
            ref.configure(t_ex=m.t_ex)
        else:
            ref = build()
        assert_models_match(m, ref)

    def test_load_from_path(self, tmp_path):
        path = tmp_path / "p.ocp"
        path.write_text(MOON_FILE)
        assert load_problem(path).n_st == 2

    def test_names_and_guess(self):
        m = parse_problem(data_text("bicycle.ocp"))
        assert m.names() == (["x", "y", "psi", "ux"], ["sa", "ax"])
        assert m.guess_tf == 5.0

    def test_path_greater_equal(self):
        text = MOON_FILE + "[path] x1 + x2 >= -5\n"
        p = parse_problem(text).path[0]
        assert p.lower == -5.0 and math.isinf(p.upper)

    def test_slack_weights(self):
        text = MOON_FILE.replace("x0 = off ; xf = off", "x0 = on w 3,4 ; xf = on")
        m = parse_problem(text)
        assert m.slack_x0 and m.slack_xf
        np.testing.assert_array_equal(m.w_s0, [3.0, 4.0])
        np.testing.assert_array_equal(m.w_sf, [100.0, 100.0])

    def test_missing_equation_message(self):
        text = MOON_FILE.replace("           x2' = u1 - 1.5\n", "")
        with pytest.raises((ProblemFileError, ocp.ModelError), match="number of differential equations"):
            parse_problem(text)

    @pytest.mark.parametrize("bad,line", [
        ("x1 in [0,20]; x2 in [-20,20]", None),
        ("[dynamics] x1' = x2 +", 3),
        ("[boundary] x(0) = 10 tol 0,0 ; x(tf) = 0,0 tol 0,0", 7),
        ("[bounds]   x1 in [20,0]; x2 in [-20,20]; u1 in [0,3]; tf in [0.001,400] free", 6),
        ("[slack]    x0 = maybe ; xf = off", 8),
    ])
    def test_errors_carry_line_numbers(self, bad, line):
        lines = MOON_FILE.split("\n")
        if line is None:
            text = "[nonsense] a = 1\n" + MOON_FILE
            line = 1
        else:
            key = bad.split("]")[0] + "]"
            idx = next(i for i, s in enumerate(lines) if s.startswith(key))
            lines[idx] = bad
            text = "\n".join(lines)
            line = idx + 1
        with pytest.raises(ProblemFileError) as info:
            parse_problem(text)
        assert info.value.line == line
        assert str(info.value).startswith(f"line {line}:")
