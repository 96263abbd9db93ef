"""Network substrate: geography, latency, access capacity, failures.

Connectivity follows the in-network failure model: a failed region
partitions its affected peers from the server and from each other, while
paths between an affected peer and an unaffected peer stay usable. That
asymmetry is what makes relay delivery through unaffected peers work.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace

import numpy as np

from relaysim.model import DEFAULT_UPLINK_PROFILE, Peer

EARTH_RADIUS_KM = 6371.0

# Sentinel endpoint for the content server / CDN edge.
SERVER = "server"


class UnknownCityError(KeyError):
    pass


def haversine_km(lat1: float, lon1: float, lat2: float, lon2: float) -> float:
    """Great-circle distance between two (lat, lon) points in km."""
    phi1, phi2 = math.radians(lat1), math.radians(lat2)
    dphi = math.radians(lat2 - lat1)
    dlam = math.radians(lon2 - lon1)
    h = math.sin(dphi / 2.0) ** 2 + math.cos(phi1) * math.cos(phi2) * math.sin(dlam / 2.0) ** 2
    return 2.0 * EARTH_RADIUS_KM * math.asin(math.sqrt(h))


class CityTable:
    """Named city coordinates with great-circle distance lookup."""

    def __init__(self, coords: dict[str, tuple[float, float]]):
        if not coords:
            raise ValueError("city table must contain at least one city")
        for name, (lat, lon) in coords.items():
            if not (-90.0 <= lat <= 90.0 and -180.0 <= lon <= 180.0):
                raise ValueError(f"city {name!r}: coordinates out of range")
        self._coords = dict(coords)

    @classmethod
    def from_csv(cls, path) -> "CityTable":
        """Load name,lat,lon rows; a header row is detected and skipped."""
        coords = {}
        with open(path, newline="") as fh:
            for row in csv.reader(fh):
                if not row or not "".join(row).strip():
                    continue
                if len(row) != 3:
                    raise ValueError(f"city file {path}: expected 3 columns, got {row!r}")
                name, lat_s, lon_s = (c.strip() for c in row)
                try:
                    lat, lon = float(lat_s), float(lon_s)
                except ValueError:
                    if not coords and name.lower() in ("name", "city"):
                        continue
                    raise ValueError(f"city file {path}: bad coordinates in {row!r}")
                coords[name] = (lat, lon)
        return cls(coords)

    def as_dict(self) -> dict[str, tuple[float, float]]:
        return dict(self._coords)

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(self._coords)

    def __contains__(self, name: str) -> bool:
        return name in self._coords

    def __len__(self) -> int:
        return len(self._coords)

    def coords(self, name: str) -> tuple[float, float]:
        try:
            return self._coords[name]
        except KeyError:
            raise UnknownCityError(name) from None

    def distance_km(self, a: str, b: str) -> float:
        """Great-circle distance between two cities in the table."""
        if a == b:
            self.coords(a)
            return 0.0
        la1, lo1 = self.coords(a)
        la2, lo2 = self.coords(b)
        return haversine_km(la1, lo1, la2, lo2)


def latency_ms(distance_km: float, base_ms: float = 5.0, per_km_ms: float = 0.02) -> float:
    """One-way latency as an affine function of distance."""
    if distance_km < 0:
        raise ValueError(f"distance_km must be non-negative, got {distance_km}")
    return base_ms + per_km_ms * distance_km


def assign_bandwidth(rng: np.random.Generator,
                     profile: dict[float, float] | None = None,
                     downlink_factor: float = 4.0) -> tuple[float, float]:
    """Draw (uplink, downlink) kbps from the bucketed capacity profile."""
    if profile is None:
        profile = DEFAULT_UPLINK_PROFILE
    buckets = sorted(profile)
    probs = np.array([profile[b] for b in buckets], dtype=float)
    if buckets[0] <= 0:
        raise ValueError("capacity buckets must be positive")
    if abs(probs.sum() - 1.0) > 1e-9 or (probs < 0).any():
        raise ValueError("profile probabilities must be non-negative and sum to 1")
    up = float(rng.choice(np.array(buckets, dtype=float), p=probs))
    return up, up * downlink_factor


def assign_isp(rng: np.random.Generator, isp_count: int) -> int:
    """Uniform ISP label in 1..isp_count."""
    if isp_count < 1:
        raise ValueError("isp_count must be at least 1")
    return int(rng.integers(1, isp_count + 1))


@dataclass(frozen=True)
class FailureScenario:
    """A regional in-network failure over a half-open time window.

    Unresolved scenarios (affected is None) only name the region and the
    ratio of its peers to break; inject_failure samples the concrete
    affected set. Trace-driven runs may construct a resolved scenario
    directly with region=None and an explicit affected set.
    """

    region: str | None
    ratio: float
    start_time: float = 0.0
    end_time: float = math.inf
    affected: frozenset[int] | None = None

    @property
    def resolved(self) -> bool:
        return self.affected is not None

    def active(self, t: float) -> bool:
        """True inside the window [start_time, end_time)."""
        return self.start_time <= t < self.end_time

    def is_affected(self, endpoint, t: float) -> bool:
        return (endpoint != SERVER and self.resolved and self.active(t)
                and endpoint in self.affected)


def inject_failure(scenario: FailureScenario, peers: list[Peer],
                   rng: np.random.Generator) -> FailureScenario:
    """Resolve a scenario by sampling floor(ratio * |region peers|) victims.

    Sampling is uniform without replacement over the region's peers in id
    order. An empty region resolves to an empty affected set.
    """
    if scenario.resolved:
        raise ValueError("scenario already resolved")
    if scenario.region is None:
        raise ValueError("cannot inject a failure without a region")
    region_ids = sorted(p.id for p in peers if p.city == scenario.region)
    k = math.floor(scenario.ratio * len(region_ids))
    if k > 0:
        picked = rng.choice(np.array(region_ids, dtype=np.int64), size=k, replace=False)
        affected = frozenset(int(i) for i in picked)
    else:
        affected = frozenset()
    return replace(scenario, affected=affected)


def can_connect(x, y, t: float, scenario: FailureScenario | None) -> bool:
    """Whether endpoints x and y (peer ids or SERVER) can reach each other at t.

    While the failure window is active: affected<->server is broken,
    affected<->affected is broken, affected<->unaffected still works.
    """
    if scenario is None or not scenario.resolved or not scenario.active(t):
        return True
    ax = x != SERVER and x in scenario.affected
    ay = y != SERVER and y in scenario.affected
    if ax and ay:
        return False
    if (ax and y == SERVER) or (ay and x == SERVER):
        return False
    return True


def available_throughput(relay: Peer, requester: Peer, t: float,
                         scenario: FailureScenario | None) -> float:
    """Usable kbps on the relay->requester path at t; 0 when unreachable."""
    if not can_connect(relay.id, requester.id, t, scenario):
        return 0.0
    return max(0.0, min(relay.uplink_free_kbps, requester.downlink_kbps))
