"""End-to-end tests of the command-line front end via main(argv)."""

import csv
import json
import math

import pytest

from p2pbackup import cli, trace

from conftest import make_matrix


def read_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def read_manifest(out_dir):
    with open(out_dir / "run-manifest.json", encoding="utf-8") as fh:
        return json.load(fh)


# -- trace-synth ---------------------------------------------------------

def test_trace_synth_writes_trace_and_manifest(tmp_path, capsys):
    out = tmp_path / "o"
    rc = cli.main(["trace-synth", "--peers", "6", "--slots", "24",
                   "--seed", "3", "--out-dir", str(out)])
    assert rc == 0
    matrix = trace.read_matrix_file(out / "trace.txt")
    assert (matrix.num_peers, matrix.num_slots) == (6, 24)
    manifest = read_manifest(out)
    assert manifest["subcommand"] == "trace-synth"
    assert manifest["seed"] == 3
    assert manifest["peers"] == 6
    assert "version" in manifest
    assert "(6 peers x 24 slots)" in capsys.readouterr().out


def test_trace_synth_same_seed_byte_identical(tmp_path):
    dirs = [tmp_path / "a", tmp_path / "b", tmp_path / "c"]
    for d, seed in zip(dirs, ["9", "9", "10"]):
        cli.main(["trace-synth", "--peers", "8", "--slots", "48",
                  "--seed", seed, "--out-dir", str(d)])
    a, b, c = [(d / "trace.txt").read_bytes() for d in dirs]
    assert a == b
    assert a != c


def test_trace_synth_custom_name(tmp_path):
    out = tmp_path / "o"
    cli.main(["trace-synth", "--peers", "2", "--slots", "4",
              "--name", "week.txt", "--out-dir", str(out)])
    assert (out / "week.txt").exists()


# -- trace-stats ---------------------------------------------------------

def test_trace_stats_from_matrix_file(tmp_path, capsys):
    matrix = make_matrix(["1100", "1111"])
    src = tmp_path / "m.txt"
    trace.write_matrix_file(matrix, src)
    out = tmp_path / "o"
    rc = cli.main(["trace-stats", "--matrix", str(src), "--out-dir", str(out)])
    assert rc == 0
    rows = read_csv(out / "trace-stats.csv")
    assert [float(r["availability"]) for r in rows] == [0.5, 1.0]
    manifest = read_manifest(out)
    assert manifest["system_availability"] == 0.75
    assert "system availability 0.7500" in capsys.readouterr().out


def test_trace_stats_min_uptime_filters_rows(tmp_path, capsys):
    matrix = make_matrix(["1100", "1111"])
    src = tmp_path / "m.txt"
    trace.write_matrix_file(matrix, src)
    out = tmp_path / "o"
    rc = cli.main(["trace-stats", "--matrix", str(src),
                   "--min-uptime", "0.9", "--out-dir", str(out)])
    assert rc == 0
    rows = read_csv(out / "trace-stats.csv")
    assert len(rows) == 1 and float(rows[0]["availability"]) == 1.0
    assert "1 kept by uptime filter" in capsys.readouterr().out


def test_trace_stats_from_event_file(tmp_path):
    src = tmp_path / "events.csv"
    src.write_text("p1,0,login\np1,3600,logoff\np2,0,login\np2,7200,logoff\n")
    out = tmp_path / "o"
    rc = cli.main(["trace-stats", "--events", str(src),
                   "--slot-seconds", "3600", "--out-dir", str(out)])
    assert rc == 0
    rows = read_csv(out / "trace-stats.csv")
    assert [r["peer_id"] for r in rows] == ["p1", "p2"]
    assert [float(r["availability"]) for r in rows] == [0.5, 1.0]


def test_trace_stats_requires_a_source(tmp_path):
    with pytest.raises(SystemExit):
        cli.main(["trace-stats", "--out-dir", str(tmp_path / "o")])


def test_trace_stats_missing_file_is_an_error(tmp_path, capsys):
    rc = cli.main(["trace-stats", "--matrix", str(tmp_path / "absent.txt"),
                   "--out-dir", str(tmp_path / "o")])
    assert rc == 1
    assert "error:" in capsys.readouterr().err


# -- plan ----------------------------------------------------------------

def test_plan_redundancy_query(tmp_path, capsys):
    out = tmp_path / "o"
    rc = cli.main(["plan", "--k", "64", "--a", "0.36", "--target", "0.99",
                   "--out-dir", str(out)])
    assert rc == 0
    assert "-> n=222" in capsys.readouterr().out
    rows = read_csv(out / "plan.csv")
    assert len(rows) == 1
    assert rows[0]["mode"] == "n"
    assert rows[0]["n"] == "222"


def test_plan_loss_query(tmp_path, capsys):
    out = tmp_path / "o"
    rc = cli.main(["plan", "--loss", "--n", "2", "--k", "1",
                   "--t-days", "90", "--lifetime", "90", "--out-dir", str(out)])
    assert rc == 0
    rows = read_csv(out / "plan.csv")
    p = float(rows[0]["probability"])
    assert p == pytest.approx((1 - math.exp(-1)) ** 2, rel=1e-12)
    assert "p=0.399576" in capsys.readouterr().out


def test_plan_loss_zero_window(tmp_path):
    out = tmp_path / "o"
    cli.main(["plan", "--loss", "--n", "4", "--k", "2",
              "--t-days", "0", "--out-dir", str(out)])
    rows = read_csv(out / "plan.csv")
    assert float(rows[0]["probability"]) == 0.0


def test_plan_batch_mixes_modes(tmp_path, capsys):
    batch = tmp_path / "batch.csv"
    with open(batch, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=[
            "mode", "k", "a", "target", "n", "t_days", "mean_lifetime_days"])
        writer.writeheader()
        writer.writerow({"mode": "n", "k": "4", "a": "0.5", "target": "0.9"})
        writer.writerow({"mode": "loss", "n": "2", "k": "1",
                         "t_days": "90", "mean_lifetime_days": "90"})
    out = tmp_path / "o"
    rc = cli.main(["plan", "--batch", str(batch), "--out-dir", str(out)])
    assert rc == 0
    rows = read_csv(out / "plan.csv")
    assert [r["mode"] for r in rows] == ["n", "loss"]
    assert int(rows[0]["n"]) >= 4
    assert read_manifest(out)["queries"] == 2
    assert len(capsys.readouterr().out.strip().splitlines()) == 2


def test_plan_requires_complete_query(tmp_path):
    with pytest.raises(SystemExit):
        cli.main(["plan", "--k", "64", "--out-dir", str(tmp_path / "o")])
    with pytest.raises(SystemExit):
        cli.main(["plan", "--loss", "--n", "2", "--out-dir", str(tmp_path / "o")])


# -- sched-compare -------------------------------------------------------

def test_sched_compare_grid(tmp_path):
    out = tmp_path / "o"
    rc = cli.main(["sched-compare", "--synth-peers", "10", "--synth-slots", "60",
                   "--avail-low", "0.5", "--avail-high", "0.9",
                   "--x", "2,20", "--ratios", "1.5,2.0", "--trials", "5",
                   "--seed", "1", "--out-dir", str(out)])
    assert rc == 0
    rows = read_csv(out / "sched-compare.csv")
    assert len(rows) == 4
    small = [r for r in rows if r["x"] == "2"]
    big = [r for r in rows if r["x"] == "20"]
    for r in big:
        assert "skipped" in r["note"]
        assert r["trials_used"] == "0"
    used = [r for r in small if int(r["trials_used"]) > 0]
    assert used
    for r in used:
        # optimal can never beat the no-contention bound, random never beats optimal
        assert float(r["mean_optimal_norm"]) >= 1.0 - 1e-12
        assert float(r["mean_random_norm"]) >= float(r["mean_optimal_norm"]) - 1e-12
        assert float(r["mean_random"]) >= float(r["mean_optimal"]) - 1e-12


def test_sched_compare_rejects_ratio_at_most_one(tmp_path):
    with pytest.raises(SystemExit):
        cli.main(["sched-compare", "--synth-peers", "6", "--synth-slots", "20",
                  "--x", "2", "--ratios", "1.0", "--trials", "2",
                  "--out-dir", str(tmp_path / "o")])


# -- simulate ------------------------------------------------------------

SIM_MATRIX_ROWS = ["1" * 16] * 6


def write_sim_inputs(tmp_path, flat_cdf_file, **config_overrides):
    matrix_path = tmp_path / "m.txt"
    trace.write_matrix_file(make_matrix(SIM_MATRIX_ROWS), matrix_path)
    entries = {
        "object_size": 2048,
        "fragment_size": 1024,
        "storage_quota": 65536,
        "mean_lifetime_days": 1e9,
        "redundancy_policy": "fixed",
        "fixed_target": 0.5,
        "bandwidth_source": "file",
        "bandwidth_file": str(flat_cdf_file),
    }
    entries.update(config_overrides)
    config_path = tmp_path / "sim.cfg"
    config_path.write_text(
        "".join(f"{key} = {value}\n" for key, value in entries.items()))
    return matrix_path, config_path


def test_simulate_single_run_outputs(tmp_path, flat_cdf_file, capsys):
    matrix_path, config_path = write_sim_inputs(tmp_path, flat_cdf_file)
    out = tmp_path / "o"
    rc = cli.main(["simulate", "--matrix", str(matrix_path),
                   "--config", str(config_path), "--seed", "5",
                   "--out-dir", str(out)])
    assert rc == 0
    for name in ["peers.csv", "crashes.csv", "server.csv", "summary.csv"]:
        assert (out / "run-0" / name).exists()
    with open(out / "summary.csv", newline="", encoding="utf-8") as fh:
        summary = next(csv.DictReader(fh))
    assert summary["runs"] == "1"
    assert float(summary["num_peers"]) == 6.0
    manifest = read_manifest(out)
    assert manifest["seed"] == 5
    assert manifest["config"]["object_size"] == 2048
    assert manifest["config"]["fragment_size"] == 1024
    assert manifest["source"] == {"matrix": str(matrix_path)}
    assert "1 run(s) complete" in capsys.readouterr().out


def test_simulate_same_seed_byte_identical(tmp_path, flat_cdf_file):
    matrix_path, config_path = write_sim_inputs(tmp_path, flat_cdf_file)
    outs = [tmp_path / "a", tmp_path / "b"]
    for out in outs:
        cli.main(["simulate", "--matrix", str(matrix_path),
                  "--config", str(config_path), "--seed", "5",
                  "--out-dir", str(out)])
    for name in ["run-0/peers.csv", "run-0/crashes.csv", "summary.csv"]:
        assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes()


def test_simulate_multi_run_averages(tmp_path, flat_cdf_file):
    matrix_path, config_path = write_sim_inputs(tmp_path, flat_cdf_file)
    out = tmp_path / "o"
    rc = cli.main(["simulate", "--matrix", str(matrix_path),
                   "--config", str(config_path), "--runs", "2",
                   "--seed", "0", "--out-dir", str(out)])
    assert rc == 0
    assert (out / "run-0" / "summary.csv").exists()
    assert (out / "run-1" / "summary.csv").exists()
    with open(out / "summary.csv", newline="", encoding="utf-8") as fh:
        summary = next(csv.DictReader(fh))
    assert summary["runs"] == "2"


def test_simulate_flags_override_config_file(tmp_path, flat_cdf_file):
    matrix_path, config_path = write_sim_inputs(tmp_path, flat_cdf_file)
    out = tmp_path / "o"
    rc = cli.main(["simulate", "--matrix", str(matrix_path),
                   "--config", str(config_path), "--policy", "adaptive",
                   "--parallel-downloads", "2", "--out-dir", str(out)])
    assert rc == 0
    config = read_manifest(out)["config"]
    assert config["redundancy_policy"] == "adaptive"
    assert config["parallel_downloads"] == 2


def test_simulate_seed_falls_back_to_config_file(tmp_path, flat_cdf_file):
    matrix_path, config_path = write_sim_inputs(tmp_path, flat_cdf_file, seed=41)
    out = tmp_path / "o"
    rc = cli.main(["simulate", "--matrix", str(matrix_path),
                   "--config", str(config_path), "--out-dir", str(out)])
    assert rc == 0
    assert read_manifest(out)["seed"] == 41


def test_simulate_rejects_zero_runs(tmp_path, flat_cdf_file):
    matrix_path, config_path = write_sim_inputs(tmp_path, flat_cdf_file)
    with pytest.raises(SystemExit):
        cli.main(["simulate", "--matrix", str(matrix_path),
                  "--config", str(config_path), "--runs", "0",
                  "--out-dir", str(tmp_path / "o")])


def test_simulate_bad_config_path_is_an_error(tmp_path, capsys):
    rc = cli.main(["simulate", "--config", str(tmp_path / "absent.cfg"),
                   "--out-dir", str(tmp_path / "o")])
    assert rc == 1
    assert "error:" in capsys.readouterr().err


# -- parser-level behaviour ----------------------------------------------

def test_unknown_subcommand_exits_with_usage_error():
    with pytest.raises(SystemExit) as excinfo:
        cli.main(["frobnicate"])
    assert excinfo.value.code == 2


def test_missing_subcommand_exits_with_usage_error():
    with pytest.raises(SystemExit) as excinfo:
        cli.main([])
    assert excinfo.value.code == 2


def test_unknown_flag_exits_with_usage_error():
    with pytest.raises(SystemExit) as excinfo:
        cli.main(["plan", "--k", "4", "--a", "0.5", "--target", "0.9",
                  "--bogus-flag"])
    assert excinfo.value.code == 2
