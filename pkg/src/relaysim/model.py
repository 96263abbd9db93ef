"""Domain types and validated configuration for the delivery simulator.

Everything else in the package builds on the types here: peers with
bounded sessions, content items, trace rows, and the central SimConfig
whose defaults describe the reference scenario (5000 peers across five
cities, Poisson arrivals, heavy-tailed sessions, one failed region).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields

# Reference city set with (lat, lon) in degrees.
DEFAULT_CITIES: dict[str, tuple[float, float]] = {
    "Beijing": (39.90, 116.40),
    "Shanghai": (31.23, 121.47),
    "Guangzhou": (23.13, 113.26),
    "Chengdu": (30.57, 104.07),
    "Wuhan": (30.59, 114.31),
}

# Uplink capacity profile: kbps bucket -> probability mass.
DEFAULT_UPLINK_PROFILE: dict[float, float] = {
    512.0: 0.20,
    1024.0: 0.40,
    3072.0: 0.25,
    10240.0: 0.15,
}

STRATEGIES = ("no-relay", "random", "path-aware")
WORKLOAD_MODES = ("utilization", "count")


class ConfigError(ValueError):
    """Raised when a configuration fails validation; carries all violations."""

    def __init__(self, errors: list[str]):
        super().__init__("; ".join(errors))
        self.errors = list(errors)


@dataclass
class Peer:
    """A browser peer with one bounded session.

    Times are simulation seconds. The capacity ledger (relayed_kbps_in_use)
    and workload counter are mutated by the engine while the peer serves
    relay transfers.
    """

    id: int
    city: str
    isp: int
    uplink_kbps: float
    downlink_kbps: float
    join_time: float
    session_duration: float
    workload: int = 0
    relayed_kbps_in_use: float = 0.0
    fetch_failure_history: bool = False
    in_failed_set: bool = False

    @property
    def departure_time(self) -> float:
        return self.join_time + self.session_duration

    def online(self, t: float) -> bool:
        """True while the session covers t (join inclusive, departure exclusive)."""
        return self.join_time <= t < self.departure_time

    def elapse(self, t: float) -> float:
        """Seconds spent online at time t (negative before join)."""
        return t - self.join_time

    @property
    def uplink_free_kbps(self) -> float:
        return max(0.0, self.uplink_kbps - self.relayed_kbps_in_use)

    @property
    def uplink_utilization(self) -> float:
        return self.relayed_kbps_in_use / self.uplink_kbps


@dataclass(frozen=True)
class ContentItem:
    """A fetchable object; size in KB, 8 bits per byte on the wire."""

    size_kb: float
    origin_server: str = "cdn"

    @property
    def size_kbits(self) -> float:
        return self.size_kb * 8.0


@dataclass(frozen=True)
class TraceRecord:
    """One access-log row: a user session with an optional fetch failure mark."""

    user_id: str
    request_ts: float
    leave_ts: float
    fetch_failure: bool = False

    @property
    def duration(self) -> float:
        return self.leave_ts - self.request_ts


@dataclass
class SimConfig:
    """Full simulation configuration with reference-scenario defaults.

    Rates are expressed as: arrivals per simulated minute, session Pareto
    parameters in minutes (None means calibrate from the standard session
    quantiles), capacities in kbps, latencies in ms, sizes in KB.
    """

    peer_count: int = 5000
    city_table: dict[str, tuple[float, float]] = field(
        default_factory=lambda: dict(DEFAULT_CITIES))
    isp_count: int = 3
    arrival_rate_lambda: float = 30.0   # arrivals per sim-minute
    pareto_shape: float | None = None
    pareto_scale_min: float | None = None
    alpha: float = 0.2                  # careful-fraction of the relay list
    gamma: float = 0.8                  # workload filter threshold
    zeta: int = 10                      # relay list length
    workload_mode: str = "utilization"
    failure_ratio: float = 0.6
    failure_region: str = "Beijing"
    failure_start: float = 0.0
    failure_end: float = math.inf
    content_size_kb: float = 1600.0     # average web page weight
    content_sizes_kb: tuple[float, ...] = (500.0, 1000.0, 2000.0, 4000.0,
                                           8000.0, 16000.0)
    uplink_profile: dict[float, float] = field(
        default_factory=lambda: dict(DEFAULT_UPLINK_PROFILE))
    downlink_factor: float = 4.0
    latency_base_ms: float = 5.0
    latency_per_km_ms: float = 0.02
    tts_coeffs: tuple[float, float, float] = (-0.0076, 0.97, 3.5)
    tts_clamp_min: float = 60.0
    strategy: str = "path-aware"
    rng_seed: int = 42
    sim_duration: float = math.inf


def config_errors(cfg: SimConfig) -> list[str]:
    """Collect every violated constraint; empty list means valid."""
    errs = []
    if cfg.peer_count <= 0:
        errs.append("peer_count: must be positive")
    if not cfg.city_table:
        errs.append("city_table: must contain at least one city")
    for name, coord in cfg.city_table.items():
        if len(coord) != 2:
            errs.append(f"city_table[{name}]: expected (lat, lon)")
            continue
        lat, lon = coord
        if not (-90.0 <= lat <= 90.0 and -180.0 <= lon <= 180.0):
            errs.append(f"city_table[{name}]: coordinates out of range")
    if cfg.isp_count < 1:
        errs.append("isp_count: must be at least 1")
    if cfg.arrival_rate_lambda <= 0:
        errs.append("arrival_rate_lambda: must be positive")
    if cfg.pareto_shape is not None and cfg.pareto_shape <= 0:
        errs.append("pareto_shape: must be positive when set")
    if cfg.pareto_scale_min is not None and cfg.pareto_scale_min <= 0:
        errs.append("pareto_scale_min: must be positive when set")
    if not 0.0 <= cfg.alpha <= 1.0:
        errs.append("alpha: must lie in [0, 1]")
    if not 0.0 <= cfg.gamma <= 1.0:
        errs.append("gamma: must lie in [0, 1]")
    if cfg.zeta < 1:
        errs.append("zeta: must be at least 1")
    if cfg.workload_mode not in WORKLOAD_MODES:
        errs.append(f"workload_mode: must be one of {WORKLOAD_MODES}")
    if not 0.0 <= cfg.failure_ratio <= 1.0:
        errs.append("failure_ratio: must lie in [0, 1]")
    if cfg.failure_region not in cfg.city_table:
        errs.append(f"failure_region: unknown city {cfg.failure_region!r}")
    if cfg.failure_start < 0:
        errs.append("failure_start: must be non-negative")
    if not cfg.failure_start < cfg.failure_end:
        errs.append("failure_start: must precede failure_end")
    if cfg.content_size_kb <= 0:
        errs.append("content_size_kb: must be positive")
    if not cfg.content_sizes_kb or any(s <= 0 for s in cfg.content_sizes_kb):
        errs.append("content_sizes_kb: must be a non-empty list of positive sizes")
    if not cfg.uplink_profile:
        errs.append("uplink_profile: must not be empty")
    else:
        if any(k <= 0 for k in cfg.uplink_profile):
            errs.append("uplink_profile: capacity buckets must be positive")
        if any(p < 0 for p in cfg.uplink_profile.values()):
            errs.append("uplink_profile: probabilities must be non-negative")
        if abs(sum(cfg.uplink_profile.values()) - 1.0) > 1e-9:
            errs.append("uplink_profile: probabilities must sum to 1")
    if cfg.downlink_factor <= 0:
        errs.append("downlink_factor: must be positive")
    if cfg.latency_base_ms < 0:
        errs.append("latency_base_ms: must be non-negative")
    if cfg.latency_per_km_ms < 0:
        errs.append("latency_per_km_ms: must be non-negative")
    if len(cfg.tts_coeffs) != 3:
        errs.append("tts_coeffs: expected exactly three coefficients")
    if cfg.tts_clamp_min <= 0:
        errs.append("tts_clamp_min: must be positive")
    if cfg.strategy not in STRATEGIES:
        errs.append(f"strategy: must be one of {STRATEGIES}")
    if cfg.sim_duration <= 0:
        errs.append("sim_duration: must be positive")
    return errs


def validate_config(cfg: SimConfig) -> SimConfig:
    """Return cfg unchanged or raise ConfigError listing every violation."""
    errs = config_errors(cfg)
    if errs:
        raise ConfigError(errs)
    return cfg


def config_field_names() -> tuple[str, ...]:
    return tuple(f.name for f in fields(SimConfig))
