"""File format, sweep orchestration, and CLI tests."""

import argparse
import csv
import json
import math

import pytest

from relaysim.engine import RequestOutcome
from relaysim.io import (
    OUTCOME_COLUMNS,
    SWEEP_COLUMNS,
    TRACE_COLUMNS,
    SweepResult,
    SweepSpec,
    TraceFormatError,
    apply_overrides,
    build_config,
    build_trace_peers,
    load_config_file,
    main,
    parse_trace,
    replay_sessions,
    run_sweep,
    run_trace,
    summarize_sweep,
    synthesize_trace,
    write_outcomes_csv,
    write_sweep_csv,
    write_trace_csv,
)
from relaysim.model import ConfigError, SimConfig, TraceRecord
from relaysim.netsim import SERVER


def make_args(**kw):
    base = dict(config=None, set=[], seed=None, peers=None, strategy=None,
                size=None, failure_ratio=None, failure_region=None)
    base.update(kw)
    return argparse.Namespace(**base)


class TestConfigFile:
    def test_key_value_with_comments(self, tmp_path):
        f = tmp_path / "sim.cfg"
        f.write_text(
            "# reference scenario\n"
            "peer_count = 100\n"
            "alpha=0.3   # inline comment\n"
            "\n"
            "strategy = random\n")
        raw = load_config_file(f)
        assert raw == {"peer_count": "100", "alpha": "0.3", "strategy": "random"}

    def test_bad_line_rejected(self, tmp_path):
        f = tmp_path / "sim.cfg"
        f.write_text("peer_count 100\n")
        with pytest.raises(ConfigError):
            load_config_file(f)

    def test_apply_overrides_types(self):
        cfg = apply_overrides(SimConfig(), {
            "peer_count": "250",
            "alpha": "0.5",
            "strategy": "random",
            "pareto_shape": "none",
            "tts_coeffs": "-0.01,1.0,2.0",
            "content_sizes_kb": "500,1000",
            "uplink_profile": "512:0.5,1024:0.5",
            "failure_end": "inf",
        })
        assert cfg.peer_count == 250
        assert cfg.alpha == 0.5
        assert cfg.strategy == "random"
        assert cfg.pareto_shape is None
        assert cfg.tts_coeffs == (-0.01, 1.0, 2.0)
        assert cfg.content_sizes_kb == (500.0, 1000.0)
        assert cfg.uplink_profile == {512.0: 0.5, 1024.0: 0.5}
        assert cfg.failure_end == math.inf

    def test_unknown_key_rejected(self):
        with pytest.raises(ConfigError) as ei:
            apply_overrides(SimConfig(), {"warpdrive": "1"})
        assert "warpdrive" in str(ei.value)

    def test_unparsable_value_rejected(self):
        with pytest.raises(ConfigError):
            apply_overrides(SimConfig(), {"peer_count": "many"})

    def test_city_file_override(self, tmp_path):
        f = tmp_path / "cities.csv"
        f.write_text("A,10.0,20.0\nB,30.0,40.0\n")
        cfg = apply_overrides(SimConfig(), {"city_file": str(f),
                                            "failure_region": "A"})
        assert cfg.city_table == {"A": (10.0, 20.0), "B": (30.0, 40.0)}

    def test_build_config_precedence(self, tmp_path):
        f = tmp_path / "sim.cfg"
        f.write_text("peer_count = 100\nalpha = 0.1\n")
        args = make_args(config=str(f), set=["alpha=0.4"], peers=77)
        cfg = build_config(args)
        assert cfg.peer_count == 77     # direct flag beats file
        assert cfg.alpha == 0.4         # --set beats file

    def test_build_config_env_seed(self, monkeypatch):
        monkeypatch.setenv("RELAYSIM_SEED", "123")
        cfg = build_config(make_args())
        assert cfg.rng_seed == 123
        cfg = build_config(make_args(seed=9))
        assert cfg.rng_seed == 9        # flag beats environment

    def test_build_config_bad_env_seed(self, monkeypatch):
        monkeypatch.setenv("RELAYSIM_SEED", "lots")
        with pytest.raises(ConfigError):
            build_config(make_args())

    def test_build_config_validates(self):
        with pytest.raises(ConfigError):
            build_config(make_args(set=["alpha=1.5"]))


class TestTraceParsing:
    def write(self, tmp_path, body):
        f = tmp_path / "trace.csv"
        f.write_text("user_id,request_ts,leave_ts,fetch_failure\n" + body)
        return f

    def test_basic_row(self, tmp_path):
        f = self.write(tmp_path, "u1,100,160,0\n")
        parsed = parse_trace(f)
        assert parsed.errors == ()
        (rec,) = parsed.records
        assert rec.user_id == "u1"
        assert rec.duration == 60.0
        assert rec.fetch_failure is False

    def test_failure_flag(self, tmp_path):
        f = self.write(tmp_path, "u1,100,160,1\nu2,5,10,true\n")
        parsed = parse_trace(f)
        assert [r.fetch_failure for r in parsed.records] == [True, True]

    def test_iso_timestamps(self, tmp_path):
        f = self.write(tmp_path,
                       "u1,2026-01-01T00:00:00Z,2026-01-01T00:01:00Z,0\n")
        (rec,) = parse_trace(f).records
        assert rec.duration == 60.0

    def test_missing_header_fatal(self, tmp_path):
        f = tmp_path / "trace.csv"
        f.write_text("u1,100,160,0\n")
        with pytest.raises(TraceFormatError):
            parse_trace(f)

    def test_backwards_interval_rejected_with_line(self, tmp_path):
        f = self.write(tmp_path, "u1,100,160,0\nu2,160,100,0\n")
        parsed = parse_trace(f)
        assert len(parsed.records) == 1
        ((lineno, msg),) = parsed.errors
        assert lineno == 3
        assert "precedes" in msg

    def test_bad_rows_collected(self, tmp_path):
        f = self.write(tmp_path,
                       "u1,100,160,0\n"
                       "u2,abc,160,0\n"
                       "u3,100,160,maybe\n"
                       ",100,160,0\n"
                       "u5,100,160\n"
                       "u6,0,60,0\nu7,0,60,0\nu8,0,60,0\nu9,0,60,1\n")
        parsed = parse_trace(f)
        assert len(parsed.records) == 5
        assert [e[0] for e in parsed.errors] == [3, 4, 5, 6]

    def test_mostly_malformed_fatal(self, tmp_path):
        f = self.write(tmp_path, "u1,100,160,0\nu2,x,y,0\nu3,a,b,0\n")
        with pytest.raises(TraceFormatError):
            parse_trace(f)

    def test_roundtrip_identity(self, tmp_path):
        records = synthesize_trace(50, seed=4, fail_fraction=0.2)
        f = tmp_path / "out.csv"
        write_trace_csv(records, f)
        parsed = parse_trace(f)
        assert parsed.errors == ()
        assert parsed.records == records


class TestSynthesisAndReplay:
    def test_synthesize_counts(self):
        records = synthesize_trace(100, seed=1, fail_fraction=0.3)
        assert len(records) == 100
        assert all(r.leave_ts > r.request_ts for r in records)
        flagged = sum(r.fetch_failure for r in records)
        assert 10 <= flagged <= 55

    def test_synthesize_deterministic(self):
        assert synthesize_trace(20, seed=2) == synthesize_trace(20, seed=2)

    def test_synthesize_validation(self):
        with pytest.raises(ValueError):
            synthesize_trace(-1)
        with pytest.raises(ValueError):
            synthesize_trace(5, fail_fraction=1.5)

    def test_replay_schedule(self):
        records = (TraceRecord("a", 0.0, 10.0), TraceRecord("b", 5.0, 20.0))
        sched = replay_sessions(records)
        assert len(sched) == 4
        times = [t for t, _, _ in sched]
        assert times == sorted(times)
        assert sched[0] == (0.0, "join", "a")
        assert sched[-1] == (20.0, "leave", "b")

    def test_replay_leave_before_join_on_tie(self):
        records = (TraceRecord("a", 0.0, 5.0), TraceRecord("b", 5.0, 9.0))
        sched = replay_sessions(records)
        assert [k for _, k, _ in sched] == ["join", "leave", "join", "leave"]
        assert sched[1] == (5.0, "leave", "a")

    def test_replay_empty(self):
        assert replay_sessions(()) == []

    def test_build_trace_peers(self):
        import numpy as np
        records = (TraceRecord("a", 3.0, 10.0), TraceRecord("b", 4.0, 20.0))
        cfg = SimConfig()
        peers = build_trace_peers(records, cfg, np.random.default_rng(0))
        assert [p.id for p in peers] == [0, 1]
        assert peers[0].join_time == 3.0
        assert peers[0].session_duration == 7.0
        assert peers[1].session_duration == 16.0
        assert all(p.city in cfg.city_table for p in peers)

    def test_run_trace_failure_rows_enter_relay_phase(self):
        records = synthesize_trace(80, seed=6, fail_fraction=0.25)
        cfg = SimConfig(peer_count=80, rng_seed=0)
        report, outcomes = run_trace(records, cfg, strategy="no-relay")
        flagged = {i for i, r in enumerate(records) if r.fetch_failure}
        assert report.total_requests == 80
        for o in outcomes:
            if o.requester_id in flagged:
                assert o.entered_relay_phase
                assert o.served_by is None     # no-relay cannot recover
            else:
                assert o.served_by == SERVER

    def test_run_trace_relay_recovers_some(self):
        records = synthesize_trace(120, seed=8, fail_fraction=0.3)
        cfg = SimConfig(peer_count=120, rng_seed=0)
        no_relay, _ = run_trace(records, cfg, strategy="no-relay")
        path, _ = run_trace(records, cfg, strategy="path-aware")
        assert path.success_ratio > no_relay.success_ratio


class TestSweep:
    def small_cfg(self):
        return SimConfig(peer_count=40, sim_duration=600.0)

    def test_spec_defaults(self):
        spec = SweepSpec()
        assert spec.content_sizes_kb == (500.0, 1000.0, 2000.0, 4000.0,
                                         8000.0, 16000.0)
        assert spec.failure_ratios == (0.0, 0.2, 0.4, 0.6, 0.8, 1.0)
        assert spec.strategies == ("no-relay", "random", "path-aware")
        assert spec.cell_count == 6 * 6 * 3

    def test_spec_validation(self):
        with pytest.raises(ValueError):
            SweepSpec(content_sizes_kb=())
        with pytest.raises(ValueError):
            SweepSpec(failure_ratios=(1.2,))
        with pytest.raises(ValueError):
            SweepSpec(strategies=("telepathy",))

    def test_cross_product_row_count(self):
        spec = SweepSpec(failure_ratios=(0.6,), seeds=(0,))
        result = run_sweep(spec, self.small_cfg())
        assert len(result.rows) == 18
        assert result.failures == []

    def test_rows_in_nesting_order(self):
        spec = SweepSpec(content_sizes_kb=(500.0, 1000.0),
                         failure_ratios=(0.6,),
                         strategies=("no-relay", "random"), seeds=(0, 1))
        result = run_sweep(spec, self.small_cfg())
        key = [(r["size_kb"], r["strategy"], r["seed"]) for r in result.rows]
        assert key == [(500.0, "no-relay", 0), (500.0, "no-relay", 1),
                       (500.0, "random", 0), (500.0, "random", 1),
                       (1000.0, "no-relay", 0), (1000.0, "no-relay", 1),
                       (1000.0, "random", 0), (1000.0, "random", 1)]

    def test_cell_failures_recorded_not_fatal(self):
        bad_cfg = SimConfig(peer_count=40, pareto_shape=-1.0)
        spec = SweepSpec(content_sizes_kb=(500.0,), failure_ratios=(0.6,),
                         strategies=("no-relay",), seeds=(0,))
        result = run_sweep(spec, bad_cfg)
        assert result.rows == []
        assert len(result.failures) == 1
        assert "pareto_shape" in result.failures[0]["error"]

    def test_csv_strict_rfc4180(self, tmp_path):
        spec = SweepSpec(content_sizes_kb=(500.0,), failure_ratios=(0.6,),
                         seeds=(0,))
        result = run_sweep(spec, self.small_cfg())
        path = tmp_path / "sweep.csv"
        write_sweep_csv(result, path)
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh, strict=True))
        assert tuple(rows[0]) == SWEEP_COLUMNS
        assert len(rows) == 1 + 3
        for row in rows[1:]:
            assert len(row) == len(SWEEP_COLUMNS)
            float(row[4])   # success_ratio parses back

    def test_summary_means_and_std(self):
        spec = SweepSpec(content_sizes_kb=(500.0,), failure_ratios=(0.6,),
                         strategies=("random",), seeds=(0, 1, 2))
        result = run_sweep(spec, self.small_cfg())
        summary = summarize_sweep(result)
        (cell,) = summary["cells"]
        assert cell["seeds"] == 3
        vals = [r["success_ratio"] for r in result.rows]
        mean = sum(vals) / 3
        assert cell["success_ratio_mean"] == pytest.approx(mean)
        var = sum((v - mean) ** 2 for v in vals) / 3
        assert cell["success_ratio_std"] == pytest.approx(math.sqrt(var))

    def test_summary_skips_missing_metrics(self):
        rows = [{"strategy": "no-relay", "size_kb": 500.0, "failure_ratio": 0.6,
                 "seed": 0, "success_ratio": 0.9, "primary_success_ratio": None,
                 "avg_attempts": None, "affected_success_ratio": 0.0,
                 "region_success_ratio": 0.4}]
        summary = summarize_sweep(SweepResult(rows, []))
        (cell,) = summary["cells"]
        assert cell["avg_attempts_mean"] is None
        assert cell["success_ratio_mean"] == 0.9


class TestDumps:
    def test_outcomes_csv(self, tmp_path):
        outs = [RequestOutcome(2, 100.0, 1.0, served_by=None, attempts=3,
                               entered_relay_phase=True, end_time=9.0),
                RequestOutcome(1, 100.0, 0.5, served_by=SERVER, end_time=2.5)]
        path = tmp_path / "outcomes.csv"
        write_outcomes_csv(outs, path)
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh, strict=True))
        assert tuple(rows[0]) == OUTCOME_COLUMNS
        assert rows[1][0] == "1"            # sorted by requester id
        assert rows[1][4] == SERVER
        assert rows[2][4] == ""             # unserved -> empty cell
        assert rows[2][5] == "3"

    def test_metrics_json(self, tmp_path):
        from relaysim.engine import collect_metrics
        from relaysim.io import write_metrics_json
        rep = collect_metrics([RequestOutcome(0, 1.0, 0.0, served_by=SERVER)])
        path = tmp_path / "metrics.json"
        write_metrics_json(rep, path)
        payload = json.loads(path.read_text())
        assert payload["success_ratio"] == 1.0
        assert list(payload) == sorted(payload)


class TestCli:
    def run_flags(self):
        return ["--peers", "40", "--seed", "0", "--set", "sim_duration=600"]

    def test_usage_error_exit_2(self, capsys):
        assert main([]) == 2
        assert main(["run", "--bogus-flag"]) == 2

    def test_run_prints_metrics(self, capsys):
        assert main(["run", *self.run_flags()]) == 0
        payload = json.loads(capsys.readouterr().out)
        assert payload["total_requests"] == 40

    def test_run_writes_outputs(self, tmp_path, capsys):
        prefix = str(tmp_path / "demo")
        assert main(["run", *self.run_flags(), "--out", prefix]) == 0
        assert (tmp_path / "demo_outcomes.csv").exists()
        assert json.loads((tmp_path / "demo_metrics.json").read_text())

    def test_config_error_exit_2(self, capsys):
        assert main(["run", "--set", "alpha=1.5"]) == 2
        assert "alpha" in capsys.readouterr().err

    def test_unknown_config_key_exit_2(self, capsys):
        assert main(["run", "--set", "warpdrive=1"]) == 2

    def test_sweep_grid_and_determinism(self, tmp_path, capsys):
        out1 = tmp_path / "a.csv"
        out2 = tmp_path / "b.csv"
        flags = ["sweep", *self.run_flags(),
                 "--sizes", "500,16000", "--ratios", "0.6",
                 "--strategies", "path-aware,random,no-relay", "--seeds", "0"]
        assert main([*flags, "--out", str(out1)]) == 0
        assert main([*flags, "--out", str(out2)]) == 0
        assert out1.read_bytes() == out2.read_bytes()
        with open(out1, newline="") as fh:
            rows = list(csv.reader(fh))
        assert len(rows) == 1 + 6

    def test_sweep_summary_file(self, tmp_path, capsys):
        out = tmp_path / "s.csv"
        summary = tmp_path / "s.json"
        assert main(["sweep", *self.run_flags(), "--sizes", "500",
                     "--ratios", "0.6", "--seeds", "0,1",
                     "--out", str(out), "--summary", str(summary)]) == 0
        payload = json.loads(summary.read_text())
        assert len(payload["cells"]) == 3
        assert all(c["seeds"] == 2 for c in payload["cells"])

    def test_trace_synthesize_then_replay(self, tmp_path, capsys):
        trace = tmp_path / "t.csv"
        assert main(["trace", "--file", str(trace), "--synthesize", "60",
                     "--seed", "3"]) == 0
        capsys.readouterr()
        assert main(["trace", "--file", str(trace), "--peers", "60",
                     "--seed", "0"]) == 0
        payload = json.loads(capsys.readouterr().out)
        assert payload["total_requests"] == 60

    def test_trace_missing_file_exit_1(self, capsys):
        assert main(["trace", "--file", "/nonexistent/trace.csv"]) == 1

    def test_calibrate_defaults(self, capsys):
        assert main(["calibrate"]) == 0
        payload = json.loads(capsys.readouterr().out)
        assert payload["shape_a"] == pytest.approx(0.6020599913279624)
        assert payload["scale_x_m_minutes"] == pytest.approx(0.2182910614043151)

    def test_calibrate_bad_quantiles_exit_2(self, capsys):
        assert main(["calibrate", "--q1", "1:0.9", "--q2", "10:0.6"]) == 2

    def test_solve_exact(self, tmp_path, capsys):
        inst = tmp_path / "m.csv"
        inst.write_text("10.0,8.0\n10.0,8.0\n9.0,1.0\n")
        assert main(["solve", "--matrix", str(inst), "--exact"]) == 0
        payload = json.loads(capsys.readouterr().out)
        assert payload["objective"] == 17.0
        assert payload["assignment"] == [1, 0]

    def test_solve_greedy(self, tmp_path, capsys):
        inst = tmp_path / "m.csv"
        inst.write_text("10.0,8.0\n10.0,8.0\n9.0,1.0\n")
        assert main(["solve", "--matrix", str(inst), "--greedy"]) == 0
        payload = json.loads(capsys.readouterr().out)
        assert payload["objective"] == 11.0

    def test_solve_infeasible_exit_1(self, tmp_path, capsys):
        inst = tmp_path / "m.csv"
        inst.write_text("1.0\n5.0\n")
        assert main(["solve", "--matrix", str(inst), "--exact"]) == 1
        assert "infeasible" in capsys.readouterr().err
