import csv

import numpy as np
import pytest

from mpfckit import bench, cli
from mpfckit.mpc import LOG_COLUMNS

HEADER = "t,y1,y2,x1,x2,u1,u2,s,sdot,v,px,py,e_norm,status,iters,solve_ms"


def test_simulate_writes_trajectory_csv(tmp_path):
    out = tmp_path / "run.csv"
    code = cli.main(["simulate", "--controller", "mpfc", "--integrator", "rk4", "--scenario", "obstacles",
                     "--horizon", "0.05", "--duration", "0.05", "--out", str(out)])
    assert code == cli.EXIT_OK
    lines = out.read_text().splitlines()
    assert lines[0] == HEADER == ",".join(LOG_COLUMNS)
    assert len(lines) == 1 + 5
    rows = list(csv.DictReader(lines))
    assert rows[0]["status"] == "optimal"
    np.testing.assert_allclose([float(r["t"]) for r in rows], [0.0, 0.01, 0.02, 0.03, 0.04], atol=1e-15)


def test_config_file_and_flag_override(tmp_path):
    cfg = tmp_path / "scenario.cfg"
    cfg.write_text("# short TT run\nscenario = approach\ncontroller = ttmpc\nduration = 0.5  # seconds\n")
    out = tmp_path / "run.csv"
    assert cli.main(["simulate", "--config", str(cfg), "--horizon", "0.03", "--duration", "0.03", "--out", str(out)]) == cli.EXIT_OK
    rows = list(csv.DictReader(out.read_text().splitlines()))
    assert len(rows) == 3
    # the tracking controller logs its reference clock in the s column
    np.testing.assert_allclose([float(r["s"]) for r in rows], [float(r["t"]) for r in rows], atol=1e-15)


def test_read_config_parses_types(tmp_path):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("horizon = 0.4\nobstacles = 0.55,0.75,0.02; 0.4,0.4,0.04\njoint_speed_max = none\n")
    values = cli.read_config(str(cfg), cli.SIMULATE_KEYS)
    assert values["horizon"] == 0.4 and values["joint_speed_max"] is None
    assert [o.radius for o in values["obstacles"]] == [0.02, 0.04]


@pytest.mark.parametrize("text", ["bogus = 1\n", "horizon 0.2\n", "horizon = abc\n"])
def test_bad_config_exits_1(tmp_path, text, capsys):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text(text)
    assert cli.main(["simulate", "--config", str(cfg)]) == cli.EXIT_USAGE
    assert "error" in capsys.readouterr().err


@pytest.mark.parametrize("argv", [
    [],
    ["simulate", "--controller", "pid"],
    ["simulate", "--horizon", "0.205", "--duration", "0.1"],
    ["bench", "--samples", "0"],
    ["bench", "--horizons", "0.105"],
    ["simulate", "--config", "/nonexistent/file.cfg"],
])
def test_invalid_arguments_exit_1(argv):
    assert cli.main(argv) == cli.EXIT_USAGE


def test_bench_summary_is_byte_identical(tmp_path, capsys):
    args = ["bench", "--samples", "3", "--horizons", "0.1,0.2", "--seed", "7"]
    assert cli.main(args + ["--out", str(tmp_path / "a")]) == cli.EXIT_OK
    assert cli.main(args + ["--out", str(tmp_path / "b")]) == cli.EXIT_OK
    a = (tmp_path / "a" / "summary.csv").read_bytes()
    assert a == (tmp_path / "b" / "summary.csv").read_bytes()
    assert len(a.decode().splitlines()) == 1 + 4
    timing = (tmp_path / "a" / "timing.csv").read_text()
    for r in csv.DictReader(timing.splitlines()):
        q = [float(r[k]) for k in ("time_min", "time_q1", "time_median", "time_q3", "time_max")]
        assert q == sorted(q)


def test_bench_seed_from_environment(monkeypatch):
    monkeypatch.setenv(bench.SEED_ENV, "11")
    assert bench.default_seed() == 11
    assert bench.BenchConfig(samples=1).seed == 11


def test_sample_positions_lie_in_the_quadrant_band():
    p = bench.sample_positions(500, seed=3)
    r = np.linalg.norm(p, axis=1)
    assert p.shape == (500, 2) and np.all(p >= 0) and np.all(p <= 1)
    assert np.all((r >= 0.02) & (r <= 0.98))
    np.testing.assert_array_equal(p, bench.sample_positions(500, seed=3))


def test_float_round_trip():
    for x in (0.1, 1 / 3, np.pi * 1e-12, -2.5e300):
        assert float(bench.float_str(x)) == x


def test_selftest_exits_0(capsys):
    assert cli.main(["selftest"]) == cli.EXIT_OK
    out = capsys.readouterr().out
    assert "FAIL" not in out and "PASS" in out


def test_selftest_failure_exits_2(monkeypatch):
    monkeypatch.setattr(cli, "run_selftest", lambda: [("broken", False, "forced")])
    assert cli.main(["selftest"]) == cli.EXIT_SELFTEST
