import os
import subprocess
import sys
from pathlib import Path

import pytest

PKG_ROOT = Path(__file__).resolve().parents[1]


def run_cli(*args: str):
    env = dict(os.environ)
    env["PYTHONPATH"] = str(PKG_ROOT / "src") + os.pathsep + env.get(
        "PYTHONPATH", "")
    return subprocess.run(
        [sys.executable, "-m", "dodesym", *args],
        capture_output=True, text=True, env=env, cwd=PKG_ROOT, timeout=300,
    )


@pytest.fixture
def system_file(tmp_path):
    path = tmp_path / "system.txt"
    path.write_text(
        "f = (y-ym)*sin(dy)+dym\n"
        "g = x-(1+dy^2)\n"
        "delay = state\n"
    )
    return str(path)


@pytest.fixture
def drift_file(tmp_path):
    path = tmp_path / "drift.txt"
    path.write_text(
        "f = dy - dym\n"
        "g = x - 1\n"
        "delay = constant\n"
    )
    return str(path)


class TestRoots:
    def test_pure_square_case(self):
        proc = run_cli("roots", "--alpha", "0", "--beta", "1", "--gamma", "0",
                       "--C", "1", "--range", "-3,3")
        assert proc.returncode == 0
        assert "lambda = -1" in proc.stdout
        assert "lambda = 1" in proc.stdout

    def test_empty_window(self):
        proc = run_cli("roots", "--alpha", "0", "--beta", "1", "--gamma", "0",
                       "--C", "1", "--range", "2,3")
        assert proc.returncode == 0
        assert "no real roots" in proc.stdout


class TestVerify:
    def test_passing_field(self, system_file):
        proc = run_cli("verify", "--system", system_file, "--field", "0;1")
        assert proc.returncode == 0
        assert "PASS" in proc.stdout

    def test_failing_field_exits_one(self, system_file):
        proc = run_cli("verify", "--system", system_file, "--field", "0;y")
        assert proc.returncode == 1
        assert "FAIL" in proc.stdout


class TestBracketAndRank:
    def test_bracket_table(self):
        proc = run_cli("bracket", "--fields", "0;1", "x;y")
        assert proc.returncode == 0
        assert "[X1, X2] = (1," in proc.stdout

    def test_bracket_failure(self):
        proc = run_cli("bracket", "--fields", "0;x", "1;0")
        assert proc.returncode == 1
        assert "FAIL" in proc.stdout

    def test_rank_report(self):
        proc = run_cli("rank", "--fields", "0;1", "1;0")
        assert proc.returncode == 0
        assert "rank Z = 2" in proc.stdout
        assert "invariant count k = 5" in proc.stdout


class TestCatalog:
    def test_list(self):
        proc = run_cli("catalog", "list")
        assert proc.returncode == 0
        for required in ("A1_1", "A5_1", "A6_3", "TRAFFIC_EX2"):
            assert required in proc.stdout

    def test_show(self):
        proc = run_cli("catalog", "show", "A2_4")
        assert proc.returncode == 0
        assert "f template" in proc.stdout

    def test_check_six_field_entry(self):
        proc = run_cli("catalog", "check", "A6_3")
        assert proc.returncode == 0
        assert proc.stdout.count("PASS") == 6

    def test_unknown_entry(self):
        proc = run_cli("catalog", "check", "A9_9")
        assert proc.returncode == 1
        assert "no catalog entry" in proc.stdout


class TestIntegrate:
    def test_csv_to_file(self, tmp_path, drift_file):
        out = tmp_path / "run.csv"
        proc = run_cli("integrate", "--system", drift_file, "--phi", "x",
                       "--history", "-1,0", "--dy0", "from-phi",
                       "--to", "1.0", "--h", "0.01", "--out", str(out))
        assert proc.returncode == 0
        lines = out.read_text().strip().splitlines()
        assert lines[0] == "x,y,dy"
        assert len(lines) == 102  # 100 steps + node at 0 + header

    def test_csv_to_stdout(self, drift_file):
        proc = run_cli("integrate", "--system", drift_file, "--phi", "x",
                       "--history", "-1,0", "--to", "0.5", "--h", "0.1")
        assert proc.returncode == 0
        assert proc.stdout.startswith("x,y,dy")


class TestReduce:
    def test_drift_reduction(self, drift_file):
        proc = run_cli("reduce", "--system", drift_file, "--field", "1;1",
                       "--interval", "1.2,1.8")
        assert proc.returncode == 0
        assert "J1 =" in proc.stdout and "B =" in proc.stdout


class TestTraffic:
    def test_example_one_pipeline(self):
        proc = run_cli("traffic", "--example", "1", "--v", "1", "--tau",
                       "0.5", "--A", "-1")
        assert proc.returncode == 0
        assert "PASS" in proc.stdout
        assert "deviation" in proc.stdout

    def test_example_two_collision_regime(self):
        proc = run_cli("traffic", "--example", "2", "--alpha", "1.0",
                       "--k", "1.0")
        assert proc.returncode == 1
        assert "warning" in proc.stdout

    def test_example_two_collision_regime_allowed(self):
        proc = run_cli("traffic", "--example", "2", "--alpha", "1.0",
                       "--k", "1.0", "--allow-collision-regime")
        assert proc.returncode == 0

    def test_scenario_file_with_csv_output(self, tmp_path):
        scenario = tmp_path / "platoon.txt"
        scenario.write_text(
            "leader = 1*t\nalpha = 1.0\nn1 = 1\nn2 = 1\ntau = 0.5\n"
            "cars = 2\nhistory.1 = t - 1\nhistory.2 = t - 2\n"
            "t_end = 1.5\nh = 0.005\n"
        )
        prefix = str(tmp_path / "run")
        proc = run_cli("traffic", "--scenario", str(scenario),
                       "--out-prefix", prefix)
        assert proc.returncode == 0
        assert "no collisions" in proc.stdout
        for i in (1, 2):
            lines = (tmp_path / f"run_car{i}.csv").read_text().splitlines()
            assert lines[0] == "x,y,dy"

    def test_traffic_needs_example_or_scenario(self):
        proc = run_cli("traffic")
        assert proc.returncode == 2


class TestUsage:
    @pytest.mark.parametrize("sub", ["verify", "bracket", "rank", "catalog",
                                     "integrate", "roots", "reduce",
                                     "traffic"])
    def test_help_exits_zero(self, sub):
        proc = run_cli(sub, "--help")
        assert proc.returncode == 0
        assert "usage" in proc.stdout

    def test_unknown_flag_rejected(self):
        proc = run_cli("roots", "--alpha", "0", "--beta", "1", "--gamma",
                       "0", "--C", "1", "--range", "0,1", "--frobnicate")
        assert proc.returncode == 2
        assert "usage" in proc.stderr

    def test_missing_subcommand(self):
        proc = run_cli()
        assert proc.returncode == 2


class TestDeterminism:
    def test_traffic_example_three_reports_are_byte_identical(self):
        a = run_cli("--seed", "42", "traffic", "--example", "3")
        b = run_cli("--seed", "42", "traffic", "--example", "3")
        assert a.returncode == 0
        assert a.stdout == b.stdout
