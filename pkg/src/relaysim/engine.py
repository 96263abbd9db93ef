"""Discrete-event engine for joint server and relay-peer delivery.

Each peer issues one content request when it arrives. Requests first try
the server; a peer cut off by a regional failure falls back to its relay
candidate list and works through it one attempt at a time. Relay uplink
capacity is tracked in a ledger: transfer rates are fixed when an attempt
starts and released when it completes or aborts. Event ordering at equal
timestamps is fixed (failure transitions, completions, aborts, departures,
arrivals, request issues) so runs are bit-reproducible for a given seed.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field

import numpy as np

from relaysim import churn
from relaysim.churn import SessionModel, TimeToStayModel
from relaysim.model import ContentItem, Peer, SimConfig, validate_config
from relaysim.netsim import (SERVER, CityTable, FailureScenario, assign_bandwidth,
                             assign_isp, available_throughput, can_connect,
                             inject_failure, latency_ms)
from relaysim.selection import (RelayCandidateList, generate_relay_list,
                                no_relay_list, random_relay_list)

EVENT_PRIORITY = {
    "failure-end": 0,
    "failure-start": 1,
    "attempt-complete": 2,
    "transfer-complete": 2,
    "attempt-abort": 3,
    "peer-departure": 4,
    "peer-arrival": 5,
    "request-issue": 6,
}

_RATE_EPS = 1e-9


class CapacityError(RuntimeError):
    """Capacity ledger invariant broken; indicates an engine bug."""


@dataclass(frozen=True)
class Event:
    time: float
    kind: str
    payload: int | None = None


@dataclass
class RequestOutcome:
    """Terminal record of one request."""

    requester_id: int
    size_kb: float
    start_time: float
    served_by: int | str | None = None   # relay id, SERVER, or None
    attempts: int = 0
    primary_success: bool = False
    entered_relay_phase: bool = False
    end_time: float | None = None

    @property
    def served(self) -> bool:
        return self.served_by is not None


@dataclass
class MetricsReport:
    """Aggregated run statistics; ratios are None when undefined."""

    total_requests: int
    served_by_server: int
    served_by_relay: int
    unserved: int
    success_ratio: float | None
    relay_phase_requests: int
    primary_success_ratio: float | None
    avg_repeated_requests: float | None
    affected_requests: int
    affected_success_ratio: float | None
    region_requests: int
    region_success_ratio: float | None

    @property
    def is_empty(self) -> bool:
        return self.total_requests == 0

    def to_dict(self) -> dict:
        return {
            "total_requests": self.total_requests,
            "served_by_server": self.served_by_server,
            "served_by_relay": self.served_by_relay,
            "unserved": self.unserved,
            "success_ratio": self.success_ratio,
            "relay_phase_requests": self.relay_phase_requests,
            "primary_success_ratio": self.primary_success_ratio,
            "avg_repeated_requests": self.avg_repeated_requests,
            "affected_requests": self.affected_requests,
            "affected_success_ratio": self.affected_success_ratio,
            "region_requests": self.region_requests,
            "region_success_ratio": self.region_success_ratio,
        }


def collect_metrics(outcomes: list[RequestOutcome],
                    affected_ids: frozenset[int] = frozenset(),
                    region_ids: frozenset[int] = frozenset()) -> MetricsReport:
    """Aggregate outcomes; affected/region slices use the given id sets."""
    total = len(outcomes)
    served_server = sum(1 for o in outcomes if o.served_by == SERVER)
    served_relay = sum(1 for o in outcomes if isinstance(o.served_by, int))
    unserved = total - served_server - served_relay
    relay_phase = [o for o in outcomes if o.entered_relay_phase]
    relay_served = [o for o in outcomes if isinstance(o.served_by, int)]
    primaries = sum(1 for o in relay_phase if o.primary_success)

    def ratio(part, whole):
        return part / whole if whole else None

    affected = [o for o in outcomes if o.requester_id in affected_ids]
    region = [o for o in outcomes if o.requester_id in region_ids]
    return MetricsReport(
        total_requests=total,
        served_by_server=served_server,
        served_by_relay=served_relay,
        unserved=unserved,
        success_ratio=ratio(served_server + served_relay, total),
        relay_phase_requests=len(relay_phase),
        primary_success_ratio=ratio(primaries, len(relay_phase)),
        avg_repeated_requests=(sum(o.attempts for o in relay_served) / len(relay_served)
                               if relay_served else None),
        affected_requests=len(affected),
        affected_success_ratio=ratio(sum(1 for o in affected if o.served), len(affected)),
        region_requests=len(region),
        region_success_ratio=ratio(sum(1 for o in region if o.served), len(region)),
    )


def build_population(cfg: SimConfig, rng: np.random.Generator) -> list[Peer]:
    """Sample the peer population: Poisson arrivals, Pareto sessions,
    uniform city and ISP, bucketed access capacity."""
    model = SessionModel(
        cfg.arrival_rate_lambda,
        cfg.pareto_shape if cfg.pareto_shape is not None else churn.DEFAULT_PARETO_SHAPE,
        cfg.pareto_scale_min if cfg.pareto_scale_min is not None else churn.DEFAULT_PARETO_SCALE_MIN,
    )
    cities = list(cfg.city_table)
    peers = []
    t = 0.0
    for i in range(cfg.peer_count):
        t += float(churn.sample_interarrival(model, rng))
        duration = float(churn.sample_session_duration(model, rng))
        city = cities[int(rng.integers(len(cities)))]
        isp = assign_isp(rng, cfg.isp_count)
        up, down = assign_bandwidth(rng, cfg.uplink_profile, cfg.downlink_factor)
        peers.append(Peer(id=i, city=city, isp=isp, uplink_kbps=up, downlink_kbps=down,
                          join_time=t, session_duration=duration))
    return peers


def commit_relay_capacity(relay: Peer, kbps: float) -> None:
    """Reserve uplink for a transfer; over-commit means an engine bug."""
    if kbps <= 0:
        raise ValueError("committed rate must be positive")
    if relay.relayed_kbps_in_use + kbps > relay.uplink_kbps + _RATE_EPS:
        raise CapacityError(
            f"peer {relay.id}: commit of {kbps} kbps exceeds uplink "
            f"{relay.uplink_kbps} (in use {relay.relayed_kbps_in_use})")
    relay.relayed_kbps_in_use += kbps


def release_relay_capacity(relay: Peer, kbps: float) -> None:
    remaining = relay.relayed_kbps_in_use - kbps
    if remaining < -1e-6:
        raise CapacityError(f"peer {relay.id}: released more than committed")
    relay.relayed_kbps_in_use = 0.0 if abs(remaining) < _RATE_EPS else remaining


@dataclass(frozen=True)
class AttemptPlan:
    """Resolution of one relay attempt started at a fixed time.

    verdict: 'reject' (preconditions failed; resolve_time is the end of
    the wasted handshake), 'success' (resolve_time is delivery),
    'relay-lost' or 'requester-lost' (resolve_time is the departure that
    kills the transfer). Completion landing exactly on a departure instant
    counts as delivered.
    """

    verdict: str
    resolve_time: float
    rate_kbps: float = 0.0


def _plan_attempt(relay: Peer, requester: Peer, content: ContentItem, t: float,
                  scenario: FailureScenario | None, cities: CityTable,
                  base_ms: float, per_km_ms: float) -> AttemptPlan:
    """Decide how a single relay attempt plays out, without side effects.

    The transfer rate is fixed at start: the smaller of the relay's free
    uplink, the requester's downlink, and the relay's fair downlink share
    across its current workload plus this transfer. Every attempt pays a
    two-way handshake at the city-to-city latency.
    """
    dist = cities.distance_km(requester.city, relay.city)
    handshake = 2.0 * latency_ms(dist, base_ms, per_km_ms) / 1000.0
    reachable = (relay.online(t)
                 and can_connect(relay.id, SERVER, t, scenario)
                 and can_connect(relay.id, requester.id, t, scenario))
    if not reachable:
        return AttemptPlan("reject", t + handshake)
    avail = available_throughput(relay, requester, t, scenario)
    if avail <= _RATE_EPS:
        return AttemptPlan("reject", t + handshake)
    share = relay.downlink_kbps / (relay.workload + 1)
    rate = min(avail, share)
    t_end = t + handshake + content.size_kbits / rate
    if t_end <= relay.departure_time and t_end <= requester.departure_time:
        return AttemptPlan("success", t_end, rate)
    if requester.departure_time <= relay.departure_time:
        return AttemptPlan("requester-lost", requester.departure_time, rate)
    return AttemptPlan("relay-lost", relay.departure_time, rate)


def _plan_server(requester: Peer, content: ContentItem, t: float,
                 base_ms: float, per_km_ms: float) -> float:
    """Completion time of a server fetch from the in-city edge."""
    handshake = 2.0 * latency_ms(0.0, base_ms, per_km_ms) / 1000.0
    return t + handshake + content.size_kbits / requester.downlink_kbps


def attempt_download(requester: Peer, content: ContentItem,
                     candidates: RelayCandidateList, t: float, *,
                     peers: dict[int, Peer],
                     scenario: FailureScenario | None = None,
                     city_table: CityTable | None = None,
                     latency_base_ms: float = 5.0,
                     latency_per_km_ms: float = 0.02) -> RequestOutcome:
    """Drive one request through the server-then-relay protocol in isolation.

    Walks the candidate list sequentially from time t, accruing handshake
    and transfer delays, until the content is delivered, the requester
    departs, or the list runs out. Peer capacity ledgers are read but not
    held across attempts, so contention between concurrent requests is only
    modeled by the event engine.
    """
    if city_table is None:
        # Geography-free default: every city at the same point, latency = base.
        names = {requester.city} | {p.city for p in peers.values()}
        city_table = CityTable({n: (0.0, 0.0) for n in names})
    out = RequestOutcome(requester.id, content.size_kb, t)
    if can_connect(requester.id, SERVER, t, scenario):
        t_end = _plan_server(requester, content, t, latency_base_ms, latency_per_km_ms)
        if t_end <= requester.departure_time:
            out.served_by = SERVER
            out.end_time = t_end
        else:
            out.end_time = requester.departure_time
        return out
    requester.fetch_failure_history = True
    out.entered_relay_phase = True
    now = t
    for rid in candidates:
        if now >= requester.departure_time:
            out.end_time = requester.departure_time
            return out
        relay = peers[rid]
        out.attempts += 1
        plan = _plan_attempt(relay, requester, content, now, scenario, city_table,
                             latency_base_ms, latency_per_km_ms)
        if plan.verdict == "success":
            out.served_by = rid
            out.end_time = plan.resolve_time
            out.primary_success = out.attempts == 1
            return out
        if plan.verdict == "requester-lost":
            out.end_time = requester.departure_time
            return out
        now = plan.resolve_time
    out.end_time = min(now, requester.departure_time)
    return out


@dataclass
class _Request:
    outcome: RequestOutcome
    candidates: RelayCandidateList = field(default_factory=no_relay_list)
    next_index: int = 0
    # (kind, relay_id or None, committed rate) for the scheduled resolution
    pending: tuple | None = None


# Sub-stream labels under the master seed. Population and failure draws are
# shared by every strategy at a given seed (common random numbers), and each
# request gets its own selection stream keyed by requester id so candidate
# draws stay aligned across strategies too.
_STREAM_POPULATION = 0
_STREAM_FAILURE = 1
_STREAM_SELECT = 2


def _stream(seed: int, label: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence((seed, label) + key))


class Simulation:
    """One seeded simulation run; single-shot.

    All randomness derives from cfg.rng_seed through labeled sub-streams,
    so two runs with the same config are bit-identical and two strategies
    under the same seed see the identical population and failure draw.
    """

    def __init__(self, cfg: SimConfig, strategy: str | None = None,
                 peers: list[Peer] | None = None,
                 scenario: FailureScenario | None = None):
        validate_config(cfg)
        self.cfg = cfg
        self.strategy = strategy if strategy is not None else cfg.strategy
        if self.strategy not in ("no-relay", "random", "path-aware"):
            raise ValueError(f"unknown strategy {self.strategy!r}")
        if peers is None:
            peers = build_population(cfg, _stream(cfg.rng_seed, _STREAM_POPULATION))
        self.peers: dict[int, Peer] = {p.id: p for p in peers}
        self.city_table = CityTable(cfg.city_table)
        if scenario is None:
            scenario = inject_failure(
                FailureScenario(cfg.failure_region, cfg.failure_ratio,
                                cfg.failure_start, cfg.failure_end),
                peers, _stream(cfg.rng_seed, _STREAM_FAILURE))
        elif not scenario.resolved:
            raise ValueError("externally supplied scenario must be resolved")
        self.scenario = scenario
        self.tts = TimeToStayModel(*cfg.tts_coeffs, cfg.tts_clamp_min)
        self.content = ContentItem(cfg.content_size_kb)
        self.outcomes: list[RequestOutcome] = []
        self._online: dict[int, Peer] = {}
        self._requests: dict[int, _Request] = {}
        self._heap: list = []
        self._seq = 0
        self._now = 0.0
        self._ran = False

    def _schedule(self, time: float, kind: str, payload: int | None = None) -> None:
        self._seq += 1
        heapq.heappush(self._heap, (time, EVENT_PRIORITY[kind], self._seq,
                                    Event(time, kind, payload)))

    def run(self) -> MetricsReport:
        """Process events until the horizon, then aggregate metrics."""
        if self._ran:
            raise RuntimeError("Simulation.run is single-shot; build a new instance")
        self._ran = True
        for p in self.peers.values():
            self._schedule(p.join_time, "peer-arrival", p.id)
            if math.isfinite(p.departure_time):
                self._schedule(p.departure_time, "peer-departure", p.id)
            self._schedule(p.join_time, "request-issue", p.id)
        if self.scenario.affected:
            self._schedule(self.scenario.start_time, "failure-start")
            if math.isfinite(self.scenario.end_time):
                self._schedule(self.scenario.end_time, "failure-end")
        handlers = {
            "failure-start": self._on_failure_start,
            "failure-end": self._on_failure_end,
            "attempt-complete": self._on_attempt_complete,
            "transfer-complete": self._on_transfer_complete,
            "attempt-abort": self._on_attempt_abort,
            "peer-departure": self._on_departure,
            "peer-arrival": self._on_arrival,
            "request-issue": self._on_request_issue,
        }
        horizon = self.cfg.sim_duration
        while self._heap:
            t, _, _, ev = heapq.heappop(self._heap)
            if t > horizon:
                break
            self._now = t
            handlers[ev.kind](ev)
        for req in self._requests.values():
            if req.outcome.end_time is None:
                req.outcome.end_time = horizon
        if self.scenario.region is not None:
            region_ids = frozenset(p.id for p in self.peers.values()
                                   if p.city == self.scenario.region)
        else:
            region_ids = frozenset()
        return collect_metrics(self.outcomes, self.scenario.affected or frozenset(),
                               region_ids)

    def _on_arrival(self, ev: Event) -> None:
        self._online[ev.payload] = self.peers[ev.payload]

    def _on_departure(self, ev: Event) -> None:
        self._online.pop(ev.payload, None)

    def _on_failure_start(self, ev: Event) -> None:
        for pid in self.scenario.affected:
            self.peers[pid].in_failed_set = True

    def _on_failure_end(self, ev: Event) -> None:
        for pid in self.scenario.affected:
            self.peers[pid].in_failed_set = False

    def _on_request_issue(self, ev: Event) -> None:
        peer = self.peers[ev.payload]
        t = self._now
        out = RequestOutcome(peer.id, self.content.size_kb, t)
        req = _Request(out)
        self.outcomes.append(out)
        self._requests[peer.id] = req
        if can_connect(peer.id, SERVER, t, self.scenario):
            t_end = _plan_server(peer, self.content, t,
                                 self.cfg.latency_base_ms, self.cfg.latency_per_km_ms)
            if t_end <= peer.departure_time:
                req.pending = ("deliver", None, 0.0)
                self._schedule(t_end, "transfer-complete", peer.id)
            else:
                req.pending = ("requester-lost", None, 0.0)
                self._schedule(peer.departure_time, "attempt-abort", peer.id)
            return
        peer.fetch_failure_history = True
        out.entered_relay_phase = True
        req.candidates = self._make_candidates(peer, t)
        self._start_next_attempt(req, t)

    def _make_candidates(self, peer: Peer, t: float) -> RelayCandidateList:
        online = sorted(self._online.values(), key=lambda p: p.id)
        rng = _stream(self.cfg.rng_seed, _STREAM_SELECT, peer.id)
        if self.strategy == "no-relay":
            return no_relay_list()
        if self.strategy == "random":
            return random_relay_list(peer, online, self.cfg.zeta, rng)
        return generate_relay_list(
            peer, online, alpha=self.cfg.alpha, gamma=self.cfg.gamma,
            zeta=self.cfg.zeta, rng=rng, t=t, tts=self.tts,
            workload_mode=self.cfg.workload_mode)

    def _start_next_attempt(self, req: _Request, t: float) -> None:
        requester = self.peers[req.outcome.requester_id]
        if t >= requester.departure_time:
            self._finalize(req, None, requester.departure_time)
            return
        if req.next_index >= len(req.candidates):
            self._finalize(req, None, t)
            return
        relay = self.peers[req.candidates[req.next_index]]
        req.next_index += 1
        req.outcome.attempts += 1
        plan = _plan_attempt(relay, requester, self.content, t, self.scenario,
                             self.city_table, self.cfg.latency_base_ms,
                             self.cfg.latency_per_km_ms)
        if plan.verdict == "reject":
            req.pending = ("retry", None, 0.0)
            self._schedule(plan.resolve_time, "attempt-abort", requester.id)
            return
        commit_relay_capacity(relay, plan.rate_kbps)
        relay.workload += 1
        if plan.verdict == "success":
            req.pending = ("deliver", relay.id, plan.rate_kbps)
            self._schedule(plan.resolve_time, "attempt-complete", requester.id)
        elif plan.verdict == "relay-lost":
            req.pending = ("relay-lost", relay.id, plan.rate_kbps)
            self._schedule(plan.resolve_time, "attempt-abort", requester.id)
        else:
            req.pending = ("requester-lost", relay.id, plan.rate_kbps)
            self._schedule(plan.resolve_time, "attempt-abort", requester.id)

    def _release_pending(self, req: _Request) -> None:
        _, relay_id, rate = req.pending
        if relay_id is not None:
            relay = self.peers[relay_id]
            release_relay_capacity(relay, rate)
            relay.workload -= 1

    def _on_attempt_complete(self, ev: Event) -> None:
        req = self._requests[ev.payload]
        _, relay_id, _ = req.pending
        self._release_pending(req)
        self._finalize(req, relay_id, self._now)

    def _on_transfer_complete(self, ev: Event) -> None:
        req = self._requests[ev.payload]
        self._finalize(req, SERVER, self._now)

    def _on_attempt_abort(self, ev: Event) -> None:
        req = self._requests[ev.payload]
        kind, _, _ = req.pending
        self._release_pending(req)
        if kind == "requester-lost":
            self._finalize(req, None, self._now)
        else:
            self._start_next_attempt(req, self._now)

    def _finalize(self, req: _Request, served_by, end_time: float) -> None:
        out = req.outcome
        out.served_by = served_by
        out.end_time = end_time
        out.primary_success = isinstance(served_by, int) and out.attempts == 1
        req.pending = None
        del self._requests[out.requester_id]


def run(cfg: SimConfig, strategy: str | None = None) -> MetricsReport:
    """Build a Simulation from cfg and run it to completion."""
    return Simulation(cfg, strategy=strategy).run()
