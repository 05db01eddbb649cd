import csv
import json

import pytest

from d2oc.bench import BenchRecord, fit_slopes, run_bench, write_bench_csv
from d2oc.cli import main
from d2oc.config import BenchConfig, ConfigError, default_config_text, default_experiment, parse_config

SMALL = """
[fleet]
n_agents = 2
model = double_integrator
domain = 0 0 40 40

[field]
n_sp = 60

[gmm.a]
mean = 20 20
cov = 20 0 0 20
weight = 1.0

[solver]
horizon = 8

[mission]
coverage_target = 0.8
max_steps = 400

[bench]
horizons = 5 10
reps = 3
"""


@pytest.fixture
def small_cfg(tmp_path):
    path = tmp_path / "small.cfg"
    path.write_text(SMALL)
    return path


def test_default_config_matches_mission_setup():
    exp = default_experiment()
    cfg = exp.swarm
    assert (cfg.n_agents, cfg.comm_range, cfg.horizon) == (10, 15.0, 30)
    assert cfg.lo == (0.0, 0.0) and cfg.hi == (100.0, 100.0)
    assert len(cfg.gmm) == 3 and cfg.model == "quadrotor8"
    assert exp.bench.horizons == (10, 20, 30, 40, 50, 60) and exp.bench.reps == 50


def test_config_errors_carry_line_numbers():
    with pytest.raises(ConfigError, match=r"x.cfg:3: \[solver\] backend.*full_kkt, condensed, condensed_stable"):
        parse_config("[solver]\nhorizon = 5\nbackend = ipopt\n", "x.cfg")
    with pytest.raises(ConfigError, match=r"x.cfg:2: .*cannot parse"):
        parse_config("[fleet]\nn_agents = ten\n", "x.cfg")
    with pytest.raises(ConfigError, match=r"x.cfg:2: .*unknown key"):
        parse_config("[fleet]\nagents = 3\n", "x.cfg")
    with pytest.raises(ConfigError, match="x.cfg:1"):
        parse_config("fleet]\n", "x.cfg")


def test_simulate_writes_outputs(small_cfg, tmp_path, capsys):
    out = tmp_path / "run"
    assert main(["simulate", str(small_cfg), "--out", str(out)]) == 0
    for name in ("trace.jsonl", "summary.csv", "field.csv", "report.txt"):
        assert (out / name).exists()
    steps = (out / "trace.jsonl").read_text().splitlines()
    assert json.loads(steps[0])["step"] == 0
    assert "reached: True" in capsys.readouterr().out


def test_simulate_zero_target(small_cfg, tmp_path):
    text = small_cfg.read_text().replace("coverage_target = 0.8", "coverage_target = 0")
    small_cfg.write_text(text)
    assert main(["simulate", str(small_cfg), "--out", str(tmp_path / "z")]) == 0
    assert (tmp_path / "z" / "trace.jsonl").read_text() == ""


def test_simulate_overrides(small_cfg, tmp_path):
    args = ["simulate", str(small_cfg), "--out", str(tmp_path / "o"), "--seed", "3",
            "--backend", "condensed_stable", "--parallel"]
    assert main(args) == 0
    assert "condensed_stable" in (tmp_path / "o" / "report.txt").read_text()


def test_unknown_backend_exits_with_config_error(small_cfg, tmp_path, capsys):
    small_cfg.write_text(small_cfg.read_text().replace("horizon = 8", "horizon = 8\nbackend = magic"))
    assert main(["simulate", str(small_cfg), "--out", str(tmp_path)]) == 2
    err = capsys.readouterr().err
    assert "full_kkt, condensed, condensed_stable" in err
    assert main(["simulate", str(small_cfg), "--backend", "magic"]) == 2


def test_missing_config_file(tmp_path):
    assert main(["simulate", str(tmp_path / "nope.cfg"), "--out", str(tmp_path)]) == 2


def test_bench_csv(small_cfg, tmp_path):
    assert main(["bench", str(small_cfg), "--out", str(tmp_path)]) == 0
    rows = list(csv.reader((tmp_path / "bench.csv").open()))
    assert rows[0] == ["backend", "T", "n", "m", "reps", "mean_ms", "std_ms", "min_ms", "max_ms", "slope"]
    assert len(rows) == 5
    assert {r[0] for r in rows[1:]} == {"full_kkt", "condensed"}
    assert "timed region" in (tmp_path / "report.txt").read_text()


def test_bench_single_horizon_and_single_rep(tmp_path):
    exp = default_experiment()
    recs = run_bench(BenchConfig(horizons=(10,), reps=1), exp.swarm)
    assert all(r.std_ms == 0.0 for r in recs)
    assert fit_slopes(recs) == {}
    write_bench_csv(recs, tmp_path / "b.csv")
    header = (tmp_path / "b.csv").read_text().splitlines()[0]
    assert "slope" not in header


def test_bench_non_timing_columns_are_stable(tmp_path):
    exp = default_experiment()
    a = run_bench(BenchConfig(horizons=(5, 10), reps=2), exp.swarm)
    b = run_bench(BenchConfig(horizons=(5, 10), reps=2), exp.swarm)
    assert [r.row()[:5] for r in a] == [r.row()[:5] for r in b]


def test_bench_record_invariants():
    r = BenchRecord.from_samples("condensed", 10, 8, 2, [1.0, 2.0, 3.0])
    assert r.min_ms <= r.mean_ms <= r.max_ms and r.std_ms >= 0


def test_verify_passes_and_detects_perturbation(tmp_path, capsys):
    assert main(["verify", "--out", str(tmp_path)]) == 0
    report = (tmp_path / "report.txt").read_text().splitlines()
    names = [line.split()[1].rstrip(":") for line in report]
    assert sorted(names) == sorted(set(names)) and len(names) == 4
    assert all(line.startswith("PASS") for line in report)
    assert main(["verify", "--out", str(tmp_path), "--perturb-h", "1e-3"]) == 1
    assert "FAIL condensed_vs_schur" in capsys.readouterr().out


def test_bundled_config_is_parseable_text():
    assert "[fleet]" in default_config_text()
