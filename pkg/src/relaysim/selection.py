"""Relay candidate selection and the global assignment solvers.

The path-aware list generator builds a two-part candidate list: a careful
partition drawn from peers sharing the requester's city and ISP, and a
random partition drawn from everyone else online. Both partitions drop
peers with a fetch-failure history or too much relay workload, then sort
by estimated time-to-stay so the most durable candidates are tried first.
The solvers tackle the batch variant: pick one relay per requester to
maximize total delivered benefit under per-relay uplink caps.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from relaysim import kernels
from relaysim.churn import TimeToStayModel, estimate_time_to_stay
from relaysim.model import Peer

MAX_EXACT_DIM = 8


class Infeasible(Exception):
    """No assignment satisfies the capacity constraints."""


@dataclass(frozen=True)
class RelayCandidateList:
    """Ordered relay candidates; the first careful_count ids form the
    careful partition, the rest the random partition. Entry 0, when
    present, is the primary relay."""

    peer_ids: tuple[int, ...]
    careful_count: int = 0

    def __post_init__(self):
        if not 0 <= self.careful_count <= len(self.peer_ids):
            raise ValueError("careful_count out of range")
        if len(set(self.peer_ids)) != len(self.peer_ids):
            raise ValueError("duplicate candidate ids")

    @property
    def careful(self) -> tuple[int, ...]:
        return self.peer_ids[:self.careful_count]

    @property
    def random_part(self) -> tuple[int, ...]:
        return self.peer_ids[self.careful_count:]

    @property
    def primary(self) -> int | None:
        return self.peer_ids[0] if self.peer_ids else None

    def __len__(self):
        return len(self.peer_ids)

    def __iter__(self):
        return iter(self.peer_ids)

    def __getitem__(self, i):
        return self.peer_ids[i]


def no_relay_list() -> RelayCandidateList:
    """The degenerate strategy: never try a relay."""
    return RelayCandidateList((), 0)


def _draw(rng: np.random.Generator, pool: list[Peer], k: int) -> list[Peer]:
    k = min(k, len(pool))
    if k <= 0:
        return []
    idx = rng.choice(len(pool), size=k, replace=False)
    return [pool[i] for i in idx]


def random_relay_list(requester: Peer, online_peers: list[Peer], zeta: int,
                      rng: np.random.Generator) -> RelayCandidateList:
    """Baseline: up to zeta online peers drawn uniformly, in draw order.

    No filtering and no sorting. Callers must pass online_peers in a
    stable order (the engine uses ascending peer id) for reproducibility.
    """
    pool = [p for p in online_peers if p.id != requester.id]
    picked = _draw(rng, pool, zeta)
    return RelayCandidateList(tuple(p.id for p in picked), 0)


def _workload_ok(peer: Peer, gamma: float, mode: str) -> bool:
    if mode == "count":
        return peer.workload <= gamma
    return peer.uplink_utilization <= gamma


def generate_relay_list(requester: Peer, online_peers: list[Peer], *,
                        alpha: float, gamma: float, zeta: int,
                        rng: np.random.Generator, t: float,
                        tts: TimeToStayModel | None = None,
                        workload_mode: str = "utilization") -> RelayCandidateList:
    """Path-aware candidate list for one requester.

    ceil(zeta * alpha) slots go to the careful partition (same city and
    same ISP as the requester); the remaining slots are drawn from all
    other online peers. A shortfall in the careful partition is not
    backfilled. Both partitions drop peers with a fetch-failure history
    or workload above gamma, then sort by descending estimated
    time-to-stay (ties on ascending peer id). The careful partition comes
    first, so its most durable member is the primary relay.
    """
    if tts is None:
        tts = TimeToStayModel()
    pool = [p for p in online_peers if p.id != requester.id]
    careful_slots = min(zeta, math.ceil(zeta * alpha - 1e-12))
    same = [p for p in pool if p.city == requester.city and p.isp == requester.isp]
    careful = _draw(rng, same, careful_slots)
    taken = {p.id for p in careful}
    rest = [p for p in pool if p.id not in taken]
    randoms = _draw(rng, rest, zeta - careful_slots)

    def keep(p: Peer) -> bool:
        return not p.fetch_failure_history and _workload_ok(p, gamma, workload_mode)

    def durability(p: Peer):
        remain = estimate_time_to_stay(tts, p.elapse(t) / 60.0)
        return (-remain, p.id)

    careful = sorted((p for p in careful if keep(p)), key=durability)
    randoms = sorted((p for p in randoms if keep(p)), key=durability)
    ids = tuple(p.id for p in careful) + tuple(p.id for p in randoms)
    return RelayCandidateList(ids, len(careful))


@dataclass(frozen=True)
class SelectionMatrix:
    """Result of a batch assignment: requester q gets relay assignment[q],
    or -1 when unmatched."""

    assignment: tuple[int, ...]
    relay_caps: tuple[float, ...]

    @property
    def unmatched(self) -> tuple[int, ...]:
        return tuple(q for q, r in enumerate(self.assignment) if r < 0)

    def matrix(self) -> np.ndarray:
        """0/1 matrix p with p[r, q] = 1 iff relay r serves requester q."""
        m = len(self.relay_caps)
        n = len(self.assignment)
        p = np.zeros((m, n), dtype=np.int8)
        for q, r in enumerate(self.assignment):
            if r >= 0:
                p[r, q] = 1
        return p

    def loads(self, b: np.ndarray) -> np.ndarray:
        out = np.zeros(len(self.relay_caps), dtype=float)
        for q, r in enumerate(self.assignment):
            if r >= 0:
                out[r] += b[q, r]
        return out

    def objective(self, b: np.ndarray) -> float:
        total = 0.0
        for q, r in enumerate(self.assignment):
            if r >= 0:
                total += b[q, r]
        return float(total)

    def is_feasible(self, b: np.ndarray) -> bool:
        caps = np.asarray(self.relay_caps, dtype=float)
        return bool((self.loads(b) <= caps + kernels.CAP_EPS).all())


def _check_instance(b, caps) -> tuple[np.ndarray, np.ndarray]:
    b = np.asarray(b, dtype=float)
    caps = np.asarray(caps, dtype=float)
    if b.ndim != 2:
        raise ValueError("benefit matrix must be 2-dimensional")
    if caps.ndim != 1 or len(caps) != b.shape[1]:
        raise ValueError("need one capacity per relay column")
    if b.size and (not np.isfinite(b).all() or (b < 0).any()):
        raise ValueError("benefits must be finite and non-negative")
    if len(caps) and (not np.isfinite(caps).all() or (caps < 0).any()):
        raise ValueError("capacities must be finite and non-negative")
    return b, caps


def solve_exact(b, caps) -> tuple[SelectionMatrix, float]:
    """Optimal one-relay-per-requester assignment by full enumeration.

    Every requester must be matched; raises Infeasible when no complete
    assignment fits the caps. Instance sides are limited to MAX_EXACT_DIM.
    """
    b, caps = _check_instance(b, caps)
    n, m = b.shape
    if n > MAX_EXACT_DIM or m > MAX_EXACT_DIM:
        raise ValueError(f"exact solver limited to {MAX_EXACT_DIM}x{MAX_EXACT_DIM}, got {n}x{m}")
    if n == 0:
        return SelectionMatrix((), tuple(caps)), 0.0
    if m == 0:
        raise Infeasible("no relays available")
    k, obj = kernels.exact_best(b, caps)
    if k < 0:
        raise Infeasible("capacity constraints exclude every complete assignment")
    assignment = kernels.decode_assignment(k, n, m)
    return SelectionMatrix(assignment, tuple(caps)), obj


def solve_greedy(b, caps) -> tuple[SelectionMatrix, float]:
    """Greedy assignment: scan benefits in descending order, take what fits.

    Requesters that fit nowhere stay unmatched rather than making the
    instance infeasible. Runs in O(nm log nm) and handles sizes far beyond
    the exact solver's enumeration limit.
    """
    b, caps = _check_instance(b, caps)
    assign, obj = kernels.greedy_assign(b, caps)
    return SelectionMatrix(tuple(int(r) for r in assign), tuple(caps)), obj


def save_instance(path, b, caps) -> None:
    """Write an instance as CSV: first row caps, then one row per requester."""
    b, caps = _check_instance(b, caps)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([repr(float(c)) for c in caps])
        for row in b:
            w.writerow([repr(float(v)) for v in row])


def load_instance(path) -> tuple[np.ndarray, np.ndarray]:
    """Read an instance written by save_instance; returns (b, caps)."""
    with open(path, newline="") as fh:
        rows = [row for row in csv.reader(fh) if row and "".join(row).strip()]
    if not rows:
        raise ValueError(f"instance file {path} is empty")
    caps = np.array([float(v) for v in rows[0]], dtype=float)
    body = [[float(v) for v in row] for row in rows[1:]]
    b = np.array(body, dtype=float) if body else np.zeros((0, len(caps)))
    if body and b.shape[1] != len(caps):
        raise ValueError("benefit rows must match the capacity row length")
    return b, caps
