"""Trip record ingestion, cleaning, node snapping and temporal grouping."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import Optional

from .network import RoadNetwork, path_distance, shortest_path

log = logging.getLogger(__name__)

MPH_TO_MPS = 0.44704
MIN_SPEED_MPS = 1.0 * MPH_TO_MPS
MAX_SPEED_MPS = 55.0 * MPH_TO_MPS


@dataclass(frozen=True)
class TripRecord:
    pickup_time: float  # epoch seconds
    origin_lon: float
    origin_lat: float
    dest_lon: float
    dest_lat: float
    duration_s: float
    distance_m: float


@dataclass(frozen=True)
class SnappedTrip:
    record: TripRecord
    origin_node: int
    dest_node: int
    sd_path: tuple[int, ...]  # shortest-distance edge sequence
    sd_distance_m: float


@dataclass(frozen=True)
class ODTarget:
    """One calibration target: a snapped OD pair with its mean recorded duration."""

    origin_node: int
    dest_node: int
    duration_s: float  # mean over collapsed duplicate-OD trips
    path: tuple[int, ...]
    member_durations: tuple[float, ...] = ()

    @property
    def n_trips(self) -> int:
        return len(self.member_durations)


@dataclass
class TripGroup:
    period_start: float
    targets: list[ODTarget]
    union_edges: set[int] = field(default_factory=set)

    def __post_init__(self) -> None:
        if not self.union_edges:
            self.union_edges = {e for t in self.targets for e in t.path}


def parse_trips(path: str, utc_offset_s: float = 0.0) -> tuple[list[TripRecord], int]:
    """Parse the trips CSV; malformed rows are skipped and counted.

    Timestamps are ISO-8601 local-naive; utc_offset_s is local minus UTC,
    so epoch = naive-as-UTC epoch - utc_offset_s.
    """
    trips: list[TripRecord] = []
    skipped = 0
    with open(path, newline="") as f:
        for row in csv.DictReader(f):
            try:
                ts = datetime.fromisoformat(row["pickup_datetime"])
                if ts.tzinfo is None:
                    ts = ts.replace(tzinfo=timezone.utc)
                epoch = ts.timestamp() - utc_offset_s
                trip = TripRecord(
                    pickup_time=epoch,
                    origin_lon=float(row["origin_lon"]),
                    origin_lat=float(row["origin_lat"]),
                    dest_lon=float(row["dest_lon"]),
                    dest_lat=float(row["dest_lat"]),
                    duration_s=float(row["duration_s"]),
                    distance_m=float(row["distance_m"]),
                )
                if trip.duration_s <= 0 or trip.distance_m <= 0:
                    raise ValueError("nonpositive duration or distance")
            except (KeyError, TypeError, ValueError):
                skipped += 1
                continue
            trips.append(trip)
    if skipped:
        log.warning("parse_trips: skipped %d malformed rows in %s", skipped, path)
    return trips, skipped


def filter_trips(
    trips: list[TripRecord],
    min_speed_mps: float = MIN_SPEED_MPS,
    max_speed_mps: float = MAX_SPEED_MPS,
) -> list[TripRecord]:
    """Drop implausible trips by recorded average speed (distance / duration)."""
    return [
        t for t in trips if min_speed_mps <= t.distance_m / t.duration_s <= max_speed_mps
    ]


def snap_and_route(
    net: RoadNetwork,
    trips: list[TripRecord],
    max_speed_mps: float = MAX_SPEED_MPS,
    max_snap_m: Optional[float] = None,
) -> tuple[list[SnappedTrip], int]:
    """Snap OD coordinates to nearest nodes and route by shortest distance.

    Drops trips that snap to a degenerate OD pair, are unreachable, snap
    beyond max_snap_m, or whose route-implied speed exceeds max_speed_mps.
    Returns (snapped trips, dropped count).
    """
    snapped: list[SnappedTrip] = []
    dropped = 0
    for t in trips:
        o, o_dist = net.nearest_node(t.origin_lon, t.origin_lat)
        d, d_dist = net.nearest_node(t.dest_lon, t.dest_lat)
        if o == d:
            dropped += 1
            continue
        if max_snap_m is not None and (o_dist > max_snap_m or d_dist > max_snap_m):
            dropped += 1
            continue
        sp = shortest_path(net, o, d, weight="distance")
        if sp is None:
            dropped += 1
            continue
        path, sd_dist = sp
        if sd_dist / t.duration_s > max_speed_mps:
            dropped += 1
            continue
        snapped.append(SnappedTrip(t, o, d, tuple(path), sd_dist))
    if dropped:
        log.info("snap_and_route: dropped %d of %d trips", dropped, len(trips))
    return snapped, dropped


def group_by_period(
    snapped: list[SnappedTrip],
    dt_scale_s: float,
    horizon_start: float,
    horizon_end: float,
) -> list[TripGroup]:
    """Bucket snapped trips into half-open periods of dt_scale_s.

    Duplicate OD pairs within a period collapse to one target with the mean
    duration. Every period in the horizon gets a group, possibly empty.
    """
    if dt_scale_s <= 0:
        raise ValueError("dt_scale_s must be positive")
    n_periods = int((horizon_end - horizon_start + dt_scale_s - 1e-9) // dt_scale_s)
    n_periods = max(n_periods, 0)
    buckets: dict[int, dict[tuple[int, int], list[SnappedTrip]]] = {
        k: {} for k in range(n_periods)
    }
    for s in snapped:
        t = s.record.pickup_time
        if not (horizon_start <= t < horizon_end):
            continue
        k = int((t - horizon_start) // dt_scale_s)
        buckets[k].setdefault((s.origin_node, s.dest_node), []).append(s)

    groups: list[TripGroup] = []
    for k in range(n_periods):
        targets: list[ODTarget] = []
        for (o, d), members in sorted(buckets[k].items()):
            durations = tuple(m.record.duration_s for m in members)
            targets.append(
                ODTarget(
                    origin_node=o,
                    dest_node=d,
                    duration_s=sum(durations) / len(durations),
                    path=members[0].sd_path,
                    member_durations=durations,
                )
            )
        groups.append(TripGroup(period_start=horizon_start + k * dt_scale_s, targets=targets))
    return groups


def default_horizon(snapped: list[SnappedTrip], dt_scale_s: float) -> tuple[float, float]:
    """Smallest dt-aligned window (anchored at epoch 0) covering all pickups."""
    if not snapped:
        raise ValueError("no trips to derive a horizon from")
    t0 = min(s.record.pickup_time for s in snapped)
    t1 = max(s.record.pickup_time for s in snapped)
    start = (t0 // dt_scale_s) * dt_scale_s
    end = ((t1 // dt_scale_s) + 1) * dt_scale_s
    return start, end
