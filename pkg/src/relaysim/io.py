"""File formats and the command line interface.

Covers: key=value config files, access-trace CSV parsing and synthesis,
parameter sweeps with a stable CSV schema, per-request outcome dumps,
metrics JSON, and the relaysim CLI (run / sweep / trace / calibrate /
solve). All emitted files are deterministic for a given input: fixed row
order, repr-formatted floats, newline line endings.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
from dataclasses import dataclass, replace
from datetime import datetime, timezone

import numpy as np

from relaysim import churn, engine, selection
from relaysim.churn import SessionModel, calibrate_pareto
from relaysim.engine import MetricsReport, RequestOutcome, Simulation
from relaysim.model import (STRATEGIES, ConfigError, Peer, SimConfig, TraceRecord,
                            config_field_names, validate_config)
from relaysim.netsim import SERVER, CityTable, FailureScenario, assign_bandwidth, assign_isp

SWEEP_COLUMNS = ("strategy", "size_kb", "failure_ratio", "seed", "success_ratio",
                 "primary_success_ratio", "avg_attempts", "affected_success_ratio",
                 "region_success_ratio")

TRACE_COLUMNS = ("user_id", "request_ts", "leave_ts", "fetch_failure")

OUTCOME_COLUMNS = ("requester_id", "size_kb", "start_time", "end_time", "served_by",
                   "attempts", "primary_success", "entered_relay_phase")


class TraceFormatError(ValueError):
    pass


def _fmt(value) -> str:
    """Deterministic cell formatting: floats via repr, None empty, bools 0/1."""
    if value is None:
        return ""
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, float):
        return repr(value)
    return str(value)


# ---------------------------------------------------------------------------
# config files

def load_config_file(path) -> dict[str, str]:
    """Read key = value lines; '#' starts a comment, blank lines ignored."""
    raw = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            text = line.split("#", 1)[0].strip()
            if not text:
                continue
            if "=" not in text:
                raise ConfigError([f"{path}:{lineno}: expected key = value, got {text!r}"])
            key, val = (s.strip() for s in text.split("=", 1))
            raw[key] = val
    return raw


def _parse_optional_float(raw: str):
    if raw.lower() in ("none", "auto", ""):
        return None
    return float(raw)

def _parse_float_tuple(raw: str):
    return tuple(float(v) for v in raw.split(",") if v.strip())

def _parse_profile(raw: str):
    out = {}
    for part in raw.split(","):
        if not part.strip():
            continue
        kbps, prob = part.split(":")
        out[float(kbps)] = float(prob)
    return out

_FIELD_PARSERS = {
    "peer_count": int,
    "isp_count": int,
    "zeta": int,
    "rng_seed": int,
    "arrival_rate_lambda": float,
    "alpha": float,
    "gamma": float,
    "failure_ratio": float,
    "failure_start": float,
    "failure_end": float,
    "content_size_kb": float,
    "downlink_factor": float,
    "latency_base_ms": float,
    "latency_per_km_ms": float,
    "tts_clamp_min": float,
    "sim_duration": float,
    "pareto_shape": _parse_optional_float,
    "pareto_scale_min": _parse_optional_float,
    "workload_mode": str,
    "failure_region": str,
    "strategy": str,
    "tts_coeffs": _parse_float_tuple,
    "content_sizes_kb": _parse_float_tuple,
    "uplink_profile": _parse_profile,
}


def apply_overrides(cfg: SimConfig, raw: dict[str, str]) -> SimConfig:
    """Apply string-valued overrides to a config; unknown keys are errors.

    The special key city_file replaces the city table from a name,lat,lon
    CSV file.
    """
    known = set(config_field_names())
    updates = {}
    errors = []
    for key, val in raw.items():
        if key == "city_file":
            updates["city_table"] = CityTable.from_csv(val).as_dict()
            continue
        if key not in known:
            errors.append(f"unknown config key {key!r}")
            continue
        parser = _FIELD_PARSERS.get(key)
        if parser is None:
            errors.append(f"config key {key!r} cannot be set from text")
            continue
        try:
            updates[key] = parser(val)
        except (ValueError, TypeError):
            errors.append(f"config key {key!r}: cannot parse {val!r}")
    if errors:
        raise ConfigError(errors)
    return replace(cfg, **updates)


# ---------------------------------------------------------------------------
# traces

def _parse_timestamp(raw: str) -> float:
    """Accept epoch seconds or ISO-8601; naive datetimes are taken as UTC."""
    try:
        return float(raw)
    except ValueError:
        pass
    text = raw.strip()
    if text.endswith("Z"):
        text = text[:-1] + "+00:00"
    dt = datetime.fromisoformat(text)
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return dt.timestamp()


@dataclass(frozen=True)
class TraceParseResult:
    records: tuple[TraceRecord, ...]
    errors: tuple[tuple[int, str], ...]


def parse_trace(path) -> TraceParseResult:
    """Parse an access trace CSV with header user_id,request_ts,leave_ts,fetch_failure.

    Malformed rows are collected as (line, message) pairs and skipped; if
    more than half the data rows are malformed the whole file is rejected
    with TraceFormatError. A missing or wrong header is always fatal.
    """
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or tuple(c.strip().lower() for c in rows[0]) != TRACE_COLUMNS:
        raise TraceFormatError(
            f"{path}: expected header {','.join(TRACE_COLUMNS)}")
    records = []
    errors = []
    data_rows = 0
    for lineno, row in enumerate(rows[1:], start=2):
        if not row or not "".join(row).strip():
            continue
        data_rows += 1
        if len(row) != 4:
            errors.append((lineno, f"expected 4 fields, got {len(row)}"))
            continue
        user_id, req_s, leave_s, fail_s = (c.strip() for c in row)
        if not user_id:
            errors.append((lineno, "empty user_id"))
            continue
        try:
            req_ts = _parse_timestamp(req_s)
            leave_ts = _parse_timestamp(leave_s)
        except ValueError:
            errors.append((lineno, f"bad timestamp in {row!r}"))
            continue
        if leave_ts < req_ts:
            errors.append((lineno, "leave_ts precedes request_ts"))
            continue
        flag = fail_s.lower()
        if flag in ("0", "false"):
            fail = False
        elif flag in ("1", "true"):
            fail = True
        else:
            errors.append((lineno, f"fetch_failure must be 0 or 1, got {fail_s!r}"))
            continue
        records.append(TraceRecord(user_id, req_ts, leave_ts, fail))
    if data_rows and len(errors) > data_rows / 2:
        raise TraceFormatError(
            f"{path}: {len(errors)} of {data_rows} rows malformed")
    return TraceParseResult(tuple(records), tuple(errors))


def write_trace_csv(records, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRACE_COLUMNS)
        for r in records:
            w.writerow([r.user_id, _fmt(r.request_ts), _fmt(r.leave_ts),
                        _fmt(r.fetch_failure)])


def synthesize_trace(count: int, seed: int = 0, fail_fraction: float = 0.1,
                     start: float = 0.0) -> tuple[TraceRecord, ...]:
    """Generate a synthetic access trace from the standard churn model."""
    if count < 0:
        raise ValueError("count must be non-negative")
    if not 0.0 <= fail_fraction <= 1.0:
        raise ValueError("fail_fraction must lie in [0, 1]")
    model = SessionModel()
    rng = np.random.default_rng(seed)
    records = []
    t = start
    for i in range(count):
        t += float(churn.sample_interarrival(model, rng))
        duration = float(churn.sample_session_duration(model, rng))
        fail = bool(rng.random() < fail_fraction)
        records.append(TraceRecord(f"u{i}", t, t + duration, fail))
    return tuple(records)


def replay_sessions(records) -> list[tuple[float, str, str]]:
    """Expand trace rows into a (time, 'leave'|'join', user_id) schedule.

    Ordered by time with departures before arrivals at equal instants,
    matching the engine's event ordering.
    """
    events = []
    for r in records:
        events.append((r.leave_ts, 0, r.user_id))
        events.append((r.request_ts, 1, r.user_id))
    events.sort()
    return [(t, "leave" if k == 0 else "join", uid) for t, k, uid in events]


def build_trace_peers(records, cfg: SimConfig, rng: np.random.Generator) -> list[Peer]:
    """Materialize trace rows as peers; attributes the trace lacks (city,
    ISP, capacity) are drawn from the configured distributions."""
    cities = list(cfg.city_table)
    peers = []
    for i, rec in enumerate(records):
        city = cities[int(rng.integers(len(cities)))]
        isp = assign_isp(rng, cfg.isp_count)
        up, down = assign_bandwidth(rng, cfg.uplink_profile, cfg.downlink_factor)
        peers.append(Peer(id=i, city=city, isp=isp, uplink_kbps=up, downlink_kbps=down,
                          join_time=rec.request_ts, session_duration=rec.duration))
    return peers


def run_trace(records, cfg: SimConfig,
              strategy: str | None = None) -> tuple[MetricsReport, list[RequestOutcome]]:
    """Replay a trace: sessions and the affected set come from the file.

    Rows flagged fetch_failure form the affected set of a failure window
    spanning the whole run, so those users exercise the relay path exactly
    where the log says the server path failed.
    """
    validate_config(cfg)
    rng = engine._stream(cfg.rng_seed, engine._STREAM_POPULATION)
    peers = build_trace_peers(records, cfg, rng)
    affected = frozenset(i for i, rec in enumerate(records) if rec.fetch_failure)
    scenario = FailureScenario(region=None, ratio=0.0, start_time=0.0,
                               end_time=math.inf, affected=affected)
    sim = Simulation(cfg, strategy=strategy, peers=peers, scenario=scenario)
    report = sim.run()
    return report, sim.outcomes


# ---------------------------------------------------------------------------
# sweeps

@dataclass(frozen=True)
class SweepSpec:
    """Cartesian sweep grid; cells run in the fixed nesting order
    size -> ratio -> strategy -> seed."""

    content_sizes_kb: tuple[float, ...] = (500.0, 1000.0, 2000.0, 4000.0, 8000.0, 16000.0)
    failure_ratios: tuple[float, ...] = (0.0, 0.2, 0.4, 0.6, 0.8, 1.0)
    strategies: tuple[str, ...] = ("no-relay", "random", "path-aware")
    seeds: tuple[int, ...] = (0,)

    def __post_init__(self):
        if not (self.content_sizes_kb and self.failure_ratios
                and self.strategies and self.seeds):
            raise ValueError("sweep axes must be non-empty")
        if any(s <= 0 for s in self.content_sizes_kb):
            raise ValueError("content sizes must be positive")
        if any(not 0.0 <= r <= 1.0 for r in self.failure_ratios):
            raise ValueError("failure ratios must lie in [0, 1]")
        if any(s not in STRATEGIES for s in self.strategies):
            raise ValueError(f"strategies must be among {STRATEGIES}")

    @property
    def cell_count(self) -> int:
        return (len(self.content_sizes_kb) * len(self.failure_ratios)
                * len(self.strategies) * len(self.seeds))


@dataclass
class SweepResult:
    rows: list[dict]
    failures: list[dict]


def run_sweep(spec: SweepSpec, base_cfg: SimConfig | None = None) -> SweepResult:
    """Run every sweep cell; a failing cell is recorded, not fatal.

    Each cell reseeds with its own seed value, so all strategies at a
    given (size, ratio, seed) share one population and failure draw.
    """
    if base_cfg is None:
        base_cfg = SimConfig()
    rows = []
    failures = []
    for size in spec.content_sizes_kb:
        for ratio in spec.failure_ratios:
            for strategy in spec.strategies:
                for seed in spec.seeds:
                    cfg = replace(base_cfg, content_size_kb=size, failure_ratio=ratio,
                                  strategy=strategy, rng_seed=seed)
                    try:
                        report = engine.run(cfg)
                    except Exception as exc:  # record and continue
                        failures.append({"strategy": strategy, "size_kb": size,
                                         "failure_ratio": ratio, "seed": seed,
                                         "error": f"{type(exc).__name__}: {exc}"})
                        continue
                    rows.append({
                        "strategy": strategy,
                        "size_kb": float(size),
                        "failure_ratio": float(ratio),
                        "seed": int(seed),
                        "success_ratio": report.success_ratio,
                        "primary_success_ratio": report.primary_success_ratio,
                        "avg_attempts": report.avg_repeated_requests,
                        "affected_success_ratio": report.affected_success_ratio,
                        "region_success_ratio": report.region_success_ratio,
                    })
    return SweepResult(rows, failures)


def write_sweep_csv(result: SweepResult, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SWEEP_COLUMNS)
        for row in result.rows:
            w.writerow([_fmt(row[c]) for c in SWEEP_COLUMNS])


def summarize_sweep(result: SweepResult) -> dict:
    """Aggregate sweep rows over seeds into per-cell means."""
    cells: dict[tuple, list[dict]] = {}
    for row in result.rows:
        cells.setdefault((row["strategy"], row["size_kb"], row["failure_ratio"]),
                         []).append(row)

    def stats(rows, key):
        vals = [r[key] for r in rows if r[key] is not None]
        if not vals:
            return None, None
        mean = sum(vals) / len(vals)
        var = sum((v - mean) ** 2 for v in vals) / len(vals)
        return mean, math.sqrt(var)

    summary = []
    for (strategy, size, ratio), rows in cells.items():
        cell = {"strategy": strategy, "size_kb": size, "failure_ratio": ratio,
                "seeds": len(rows)}
        for key in ("success_ratio", "primary_success_ratio", "avg_attempts",
                    "affected_success_ratio"):
            mean, std = stats(rows, key)
            cell[f"{key}_mean"] = mean
            cell[f"{key}_std"] = std
        summary.append(cell)
    return {"cells": summary, "failures": list(result.failures)}


# ---------------------------------------------------------------------------
# outcome and metrics dumps

def write_outcomes_csv(outcomes, path) -> None:
    """Per-request outcomes ordered by requester id."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(OUTCOME_COLUMNS)
        for o in sorted(outcomes, key=lambda o: o.requester_id):
            w.writerow([o.requester_id, _fmt(o.size_kb), _fmt(o.start_time),
                        _fmt(o.end_time), _fmt(o.served_by), o.attempts,
                        _fmt(o.primary_success), _fmt(o.entered_relay_phase)])


def write_metrics_json(report: MetricsReport, path) -> None:
    with open(path, "w") as fh:
        json.dump(report.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")


# ---------------------------------------------------------------------------
# CLI

def _add_config_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", metavar="FILE", help="key = value config file")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override a single config field (repeatable)")
    p.add_argument("--seed", type=int,
                   help="RNG seed (falls back to RELAYSIM_SEED, then the config)")
    p.add_argument("--peers", type=int, help="population size")
    p.add_argument("--strategy", choices=STRATEGIES, help="relay selection strategy")
    p.add_argument("--size", type=float, metavar="KB", help="content size in KB")
    p.add_argument("--failure-ratio", type=float, help="share of region peers to fail")
    p.add_argument("--failure-region", help="city whose peers fail")


def build_config(args) -> SimConfig:
    raw = {}
    if args.config:
        raw.update(load_config_file(args.config))
    for pair in args.set:
        if "=" not in pair:
            raise ConfigError([f"--set expects KEY=VALUE, got {pair!r}"])
        key, val = pair.split("=", 1)
        raw[key.strip()] = val.strip()
    cfg = apply_overrides(SimConfig(), raw)
    seed = args.seed
    if seed is None and os.environ.get("RELAYSIM_SEED"):
        try:
            seed = int(os.environ["RELAYSIM_SEED"])
        except ValueError:
            raise ConfigError(["RELAYSIM_SEED must be an integer"])
    direct = {
        "rng_seed": seed,
        "peer_count": args.peers,
        "strategy": args.strategy,
        "content_size_kb": args.size,
        "failure_ratio": args.failure_ratio,
        "failure_region": args.failure_region,
    }
    cfg = replace(cfg, **{k: v for k, v in direct.items() if v is not None})
    return validate_config(cfg)


def _parse_quantile(raw: str) -> tuple[float, float]:
    t, p = raw.split(":")
    return float(t), float(p)


def _print_json(payload) -> None:
    print(json.dumps(payload, indent=2, sort_keys=True))


def _cmd_run(args) -> int:
    cfg = build_config(args)
    sim = Simulation(cfg)
    report = sim.run()
    if args.out:
        write_outcomes_csv(sim.outcomes, f"{args.out}_outcomes.csv")
        write_metrics_json(report, f"{args.out}_metrics.json")
    _print_json(report.to_dict())
    return 0


def _cmd_sweep(args) -> int:
    cfg = build_config(args)
    kwargs = {"content_sizes_kb": tuple(cfg.content_sizes_kb)}
    if args.sizes:
        kwargs["content_sizes_kb"] = tuple(float(v) for v in args.sizes.split(","))
    if args.ratios:
        kwargs["failure_ratios"] = tuple(float(v) for v in args.ratios.split(","))
    if args.strategies:
        kwargs["strategies"] = tuple(s.strip() for s in args.strategies.split(","))
    if args.seeds:
        kwargs["seeds"] = tuple(int(v) for v in args.seeds.split(","))
    try:
        spec = SweepSpec(**kwargs)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    result = run_sweep(spec, cfg)
    write_sweep_csv(result, args.out)
    if args.summary:
        with open(args.summary, "w") as fh:
            json.dump(summarize_sweep(result), fh, indent=2, sort_keys=True)
            fh.write("\n")
    for failure in result.failures:
        print(f"warning: cell failed: {failure}", file=sys.stderr)
    print(f"wrote {len(result.rows)} rows to {args.out}")
    return 1 if result.failures else 0


def _cmd_trace(args) -> int:
    if args.synthesize is not None:
        records = synthesize_trace(args.synthesize, seed=args.seed or 0,
                                   fail_fraction=args.fail_fraction)
        write_trace_csv(records, args.file)
        print(f"wrote {len(records)} sessions to {args.file}")
        return 0
    cfg = build_config(args)
    parsed = parse_trace(args.file)
    for lineno, msg in parsed.errors:
        print(f"warning: {args.file}:{lineno}: {msg}", file=sys.stderr)
    report, outcomes = run_trace(parsed.records, cfg)
    if args.out:
        write_outcomes_csv(outcomes, f"{args.out}_outcomes.csv")
        write_metrics_json(report, f"{args.out}_metrics.json")
    _print_json(report.to_dict())
    return 0


def _cmd_calibrate(args) -> int:
    q1 = _parse_quantile(args.q1)
    q2 = _parse_quantile(args.q2)
    x_m, shape = calibrate_pareto(q1, q2)
    _print_json({"scale_x_m_minutes": x_m, "shape_a": shape,
                 "scale_seconds": 60.0 * x_m})
    return 0


def _cmd_solve(args) -> int:
    b, caps = selection.load_instance(args.matrix)
    method = "greedy" if args.greedy else "exact"
    if method == "exact":
        try:
            sel, obj = selection.solve_exact(b, caps)
        except selection.Infeasible as exc:
            print(f"infeasible: {exc}", file=sys.stderr)
            return 1
    else:
        sel, obj = selection.solve_greedy(b, caps)
    _print_json({"method": method, "objective": obj,
                 "assignment": list(sel.assignment), "unmatched": list(sel.unmatched)})
    return 0


def cli(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="relaysim",
        description="Simulate joint CDN and browser-peer relay content delivery.")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one simulation and print metrics")
    _add_config_args(p_run)
    p_run.add_argument("--out", metavar="PREFIX",
                       help="also write PREFIX_outcomes.csv and PREFIX_metrics.json")

    p_sweep = sub.add_parser("sweep", help="run a parameter sweep grid")
    _add_config_args(p_sweep)
    p_sweep.add_argument("--sizes", help="comma list of content sizes in KB")
    p_sweep.add_argument("--ratios", help="comma list of failure ratios")
    p_sweep.add_argument("--strategies", help="comma list of strategies")
    p_sweep.add_argument("--seeds", help="comma list of seeds")
    p_sweep.add_argument("--out", default="sweep_results.csv", metavar="CSV",
                         help="result table path (default %(default)s)")
    p_sweep.add_argument("--summary", metavar="JSON", help="per-cell summary path")

    p_trace = sub.add_parser("trace", help="replay an access trace, or synthesize one")
    _add_config_args(p_trace)
    p_trace.add_argument("--file", required=True, metavar="CSV", help="trace file")
    p_trace.add_argument("--synthesize", type=int, metavar="N",
                         help="write N synthetic sessions to --file and exit")
    p_trace.add_argument("--fail-fraction", type=float, default=0.1,
                         help="fetch-failure share when synthesizing (default %(default)s)")
    p_trace.add_argument("--out", metavar="PREFIX",
                         help="also write PREFIX_outcomes.csv and PREFIX_metrics.json")

    p_cal = sub.add_parser("calibrate", help="fit Pareto session parameters")
    p_cal.add_argument("--q1", default="1:0.6", metavar="T:P",
                       help="first quantile, minutes:level (default %(default)s)")
    p_cal.add_argument("--q2", default="10:0.9", metavar="T:P",
                       help="second quantile, minutes:level (default %(default)s)")

    p_solve = sub.add_parser("solve", help="solve an assignment instance from CSV")
    p_solve.add_argument("--matrix", required=True, metavar="CSV",
                         help="caps row followed by benefit rows")
    group = p_solve.add_mutually_exclusive_group()
    group.add_argument("--exact", action="store_true", help="exact enumeration (default)")
    group.add_argument("--greedy", action="store_true", help="greedy assignment")

    args = parser.parse_args(argv)
    handlers = {"run": _cmd_run, "sweep": _cmd_sweep, "trace": _cmd_trace,
                "calibrate": _cmd_calibrate, "solve": _cmd_solve}
    try:
        return handlers[args.command](args)
    except ConfigError as exc:
        for err in exc.errors:
            print(f"config error: {err}", file=sys.stderr)
        return 2
    except (TraceFormatError, churn.CalibrationError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main(argv=None) -> int:
    try:
        return cli(argv)
    except SystemExit as exc:  # argparse exits with 2 on usage errors
        code = exc.code
        return code if isinstance(code, int) else 0


if __name__ == "__main__":
    sys.exit(main())
