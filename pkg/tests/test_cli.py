import csv
import io
import json
import shutil
from importlib import resources

import numpy as np
import pytest

from ocpkit import cli, problems

DATA = resources.files("ocpkit").joinpath("data")


def data_path(tmp_path, *names):
    """Copy shipped data files next to each other in ``tmp_path``."""
    for name in names:
        shutil.copy(DATA.joinpath(name), tmp_path / name)
    return tmp_path / names[0]


def read_csv(path):
    return list(csv.DictReader(io.StringIO(path.read_text())))


class TestSolve:
    def test_bryson_lgr(self, tmp_path):
        out = tmp_path / "out"
        code = cli.main(["solve", str(data_path(tmp_path, "bryson.ocp")), "--method", "lgr", "--N", "30",
                         "--out", str(out)])
        assert code == 0
        summary = json.loads((out / "summary.json").read_text())
        assert summary["status"] == "Optimal"
        assert abs(summary["objective"] - 16 / 3) <= 1e-3 * 16 / 3
        for name in ("trajectory.csv", "manifest.json", "state_x1.svg", "state_x2.svg", "control_u1.svg"):
            assert (out / name).exists(), name
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["command"] == "solve" and manifest["method"] == "lgr"

    def test_moon_lander_intervals(self, tmp_path):
        out = tmp_path / "out"
        code = cli.main(["solve", str(data_path(tmp_path, "moonlander.ocp")), "--method", "lgr", "--intervals", "4",
                         "--N", "10", "--out", str(out)])
        assert code == 0
        summary = json.loads((out / "summary.json").read_text())
        assert summary["tf"] == pytest.approx(problems.moon_lander_solution()["tf"], rel=1e-2)
        rows = read_csv(out / "trajectory.csv")
        assert list(rows[0]) == ["t", "h", "v", "a"]
        assert len(rows) == 41

    def test_malformed_file(self, tmp_path, capsys):
        bad = tmp_path / "bad.ocp"
        bad.write_text("[problem] states=2 controls=1\n[dynamics] x1' = x2 +\n")
        out = tmp_path / "out"
        assert cli.main(["solve", str(bad), "--out", str(out)]) == 1
        assert not out.exists()
        assert "line 2" in capsys.readouterr().err

    def test_missing_file(self, tmp_path):
        assert cli.main(["solve", str(tmp_path / "nope.ocp"), "--out", str(tmp_path / "o")]) == 1

    def test_bad_flag(self):
        assert cli.main(["solve"]) == 1

    def test_non_optimal_exit(self, tmp_path):
        out = tmp_path / "out"
        code = cli.main(["solve", str(data_path(tmp_path, "moonlander.ocp")), "--max-iter", "2", "--out", str(out)])
        assert code == 2
        assert json.loads((out / "summary.json").read_text())["status"] == "IterLimit"


class TestMpc:
    def test_single_iteration(self, tmp_path):
        cfg = data_path(tmp_path, "moonlander_mpc.json", "moonlander_mpc.ocp")
        out = tmp_path / "out"
        assert cli.main(["mpc", str(cfg), "--max-iterations", "1", "--out", str(out)]) == 0
        rows = read_csv(out / "plantlog.csv")
        assert len(rows) == 1
        assert list(rows[0])[:4] == ["step", "t0", "solve_time", "status"]
        assert rows[0]["status"] == "Optimal"

    def test_unknown_key(self, tmp_path):
        data_path(tmp_path, "moonlander_mpc.ocp")
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps({"problem": "moonlander_mpc.ocp", "horizon": 3}))
        assert cli.main(["mpc", str(cfg), "--out", str(tmp_path / "o")]) == 1

    def test_bad_json(self, tmp_path):
        cfg = tmp_path / "c.json"
        cfg.write_text("{not json")
        assert cli.main(["mpc", str(cfg), "--out", str(tmp_path / "o")]) == 1


def write_results(path, rows):
    lines = ["solver,p,rep,solve_time,status,collision"]
    lines += [f"{s},{p},0,{t},{st},{c}" for s, p, t, st, c in rows]
    path.write_text("\n".join(lines) + "\n")


class TestProfile:
    def test_two_solver_step_data(self, tmp_path):
        res = tmp_path / "results.csv"
        write_results(res, [("s1", 2, 1.0, "Optimal", 0), ("s2", 2, 1.0, "Optimal", 0),
                            ("s1", 3, 1.0, "Optimal", 0), ("s2", 3, 2.0, "Optimal", 0)])
        out = tmp_path / "out"
        assert cli.main(["profile", str(res), "--out", str(out), "--window", "1:3"]) == 0
        rows = read_csv(out / "profile.csv")
        assert list(rows[0]) == ["gamma", "P_s1", "P_s2"]
        table = {float(r["gamma"]): float(r["P_s2"]) for r in rows}
        assert table[1.0] == 0.5 and table[2.0] == 1.0
        assert (out / "profile_1.svg").exists()

    def test_failed_cells(self, tmp_path):
        res = tmp_path / "results.csv"
        write_results(res, [("a", 2, 1.0, "Optimal", 1), ("b", 2, 3.0, "Optimal", 0)])
        out = tmp_path / "out"
        assert cli.main(["profile", str(res), "--out", str(out)]) == 0
        rows = read_csv(out / "profile.csv")
        assert all(float(r["P_a"]) == 0.0 for r in rows)
        assert float(rows[0]["P_b"]) == 1.0

    def test_bad_window(self, tmp_path):
        assert cli.main(["profile", "x.csv", "--window", "0.5:2"]) == 1

    def test_malformed_results(self, tmp_path):
        res = tmp_path / "r.csv"
        res.write_text("a,b\n1,2\n")
        assert cli.main(["profile", str(res), "--out", str(tmp_path / "o")]) == 1


class TestBenchThenProfile:
    def test_reduced_pipeline(self, tmp_path):
        suite = tmp_path / "suite.json"
        data_path(tmp_path, "moonlander.ocp")
        suite.write_text(json.dumps({"problem": "moonlander.ocp", "solvers": ["trapezoid", "lgr-1", "lgr-2"],
                                     "p_min": 4, "p_max": 7, "reps": 1, "obstacle": None}))
        out = tmp_path / "out"
        assert cli.main(["bench", str(suite), "--out", str(out), "--quiet", "--parallel", "2"]) == 0
        rows = read_csv(out / "results.csv")
        assert len(rows) == 3 * 4
        assert cli.main(["profile", str(out / "results.csv"), "--out", str(out)]) == 0
        prof = read_csv(out / "profile.csv")
        for col in ("P_trapezoid", "P_lgr-1", "P_lgr-2"):
            values = np.array([float(r[col]) for r in prof])
            assert np.all(np.diff(values) >= 0)
            assert values.min() >= 0 and values.max() <= 1

    def test_unknown_solver(self, tmp_path):
        suite = tmp_path / "suite.json"
        data_path(tmp_path, "moonlander.ocp")
        suite.write_text(json.dumps({"problem": "moonlander.ocp", "solvers": ["rk45"]}))
        assert cli.main(["bench", str(suite), "--out", str(tmp_path / "o")]) == 1
