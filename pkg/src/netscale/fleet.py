"""Deterministic batched mobility-on-demand fleet simulation.

Requests accumulate into fixed-width batches; each batch is matched to
vehicles by a maximum-weight assignment whose pair weights are the marginal
profit of serving that request. Idle vehicles are periodically redistributed
toward an equal per-cell share. The whole loop is sequential and
reproducible: same inputs, same seed, bit-identical result.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.optimize import linear_sum_assignment

from .grid import GridPartition
from .network import RoadNetwork, TravelTimeLayer, path_distance, shortest_path
from .trips import SnappedTrip


class SimulationError(Exception):
    pass


@dataclass
class SimConfig:
    fleet_size: int
    dt_batch_s: float = 30.0
    dt_max_wait_s: float = 360.0
    dt_reposition_s: float = 1800.0
    base_fare: float = 0.5  # currency per served customer
    fare_per_km: float = 0.5
    cost_per_km: float = 0.25
    fixed_cost_per_vehicle_day: float = 25.0
    n_days: float = 1.0
    force_serve: bool = False  # admit negative-weight pairs (service-rate studies)
    seed: int = 0

    def __post_init__(self) -> None:
        if self.fleet_size < 1:
            raise ValueError("fleet_size must be >= 1")
        for name in ("dt_batch_s", "dt_max_wait_s", "dt_reposition_s"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


@dataclass
class Request:
    id: int
    t_r: float
    origin: int
    dest: int
    d_od_m: float
    status: str = "pending"  # pending -> assigned -> served, or pending -> rejected
    pickup_time: Optional[float] = None
    dropoff_time: Optional[float] = None
    vehicle_id: Optional[int] = None


@dataclass
class Leg:
    kind: str  # reposition | pickup | dropoff
    path: tuple[int, ...]
    start_node: int
    end_node: int
    start_time: float
    end_time: float
    distance_m: float


@dataclass
class Vehicle:
    id: int
    next_free_node: int
    next_free_time: float
    legs: list[Leg] = field(default_factory=list)
    odometer_m: float = 0.0

    def add_leg(self, leg: Leg) -> None:
        self.legs.append(leg)
        self.next_free_node = leg.end_node
        self.next_free_time = leg.end_time
        self.odometer_m += leg.distance_m


@dataclass
class SimResult:
    served_ids: list[int]
    rejected: int
    profit: float
    waits_s: dict[int, float]
    vehicle_distance_m: dict[int, float]
    service_rate: float
    mean_wait_s: float
    events: list[tuple[float, str, str, str]]  # time, entity, event, detail

    def kpis(self) -> dict:
        return {
            "served": len(self.served_ids),
            "rejected": self.rejected,
            "service_rate": self.service_rate,
            "profit": self.profit,
            "mean_wait_s": self.mean_wait_s,
            "fleet_distance_km": sum(self.vehicle_distance_m.values()) / 1000.0,
        }


class TravelTimeSource:
    """Free-flow times, or a sequence of per-period scaling layers."""

    def __init__(self, layers: Optional[list[TravelTimeLayer]] = None):
        self.layers = sorted(layers, key=lambda l: l.period_start) if layers else None

    @property
    def is_freeflow(self) -> bool:
        return self.layers is None

    def layer_at(self, t: float) -> Optional[TravelTimeLayer]:
        if self.layers is None:
            return None
        active = None
        for layer in self.layers:
            if layer.period_start <= t:
                active = layer
            else:
                break
        if active is None:
            raise SimulationError(f"no travel-time layer covers t={t:.0f}")
        return active

    def check_coverage(self, start: float, end: float) -> None:
        if self.layers is None:
            return
        if self.layers[0].period_start > start:
            raise SimulationError(
                f"travel-time profile starts at {self.layers[0].period_start:.0f}, "
                f"after simulation start {start:.0f}"
            )
        starts = [l.period_start for l in self.layers]
        diffs = [b - a for a, b in zip(starts, starts[1:])]
        if diffs and max(diffs) - min(diffs) > 1e-6:
            raise SimulationError("travel-time profile has gaps between periods")


def route(
    net: RoadNetwork, origin: int, dest: int, t: float, tts: TravelTimeSource
) -> Optional[tuple[tuple[int, ...], float, float]]:
    """Time-shortest route at the layer active at t: (path, seconds, meters)."""
    layer = tts.layer_at(t)
    if layer is None:
        sp = shortest_path(net, origin, dest, weight="freeflow")
    else:
        sp = shortest_path(net, origin, dest, weight="scaled_time", layer=layer)
    if sp is None:
        return None
    path, seconds = sp
    return tuple(path), seconds, path_distance(net, path)


def generate_requests(net: RoadNetwork, snapped: list[SnappedTrip]) -> list[Request]:
    """One request per trip, in time order; no OD deduplication."""
    ordered = sorted(enumerate(snapped), key=lambda p: (p[1].record.pickup_time, p[0]))
    return [
        Request(
            id=i,
            t_r=s.record.pickup_time,
            origin=s.origin_node,
            dest=s.dest_node,
            d_od_m=s.sd_distance_m,
        )
        for i, (_, s) in enumerate(ordered)
    ]


def pair_weight(cfg: SimConfig, d_od_m: float, deadhead_m: float) -> float:
    """Marginal profit of one served request: fare minus distance cost, in currency."""
    return (
        cfg.base_fare
        + cfg.fare_per_km * d_od_m / 1000.0
        - cfg.cost_per_km * (deadhead_m + d_od_m) / 1000.0
    )


def build_weight_matrix(
    net: RoadNetwork,
    vehicles: list[Vehicle],
    batch: list[Request],
    clock: float,
    tts: TravelTimeSource,
    cfg: SimConfig,
) -> dict[tuple[int, int], tuple[float, tuple[int, ...], float, float]]:
    """Feasible (vehicle idx, request idx) pairs with weight and deadhead route.

    A pair is feasible when the vehicle, departing from its availability,
    reaches the origin no later than t_r + dt_max_wait_s. Value is
    (weight, deadhead path, arrival time, deadhead meters).
    """
    pairs: dict[tuple[int, int], tuple[float, tuple[int, ...], float, float]] = {}
    for vi, v in enumerate(vehicles):
        depart = max(clock, v.next_free_time)
        for ri, r in enumerate(batch):
            dh = route(net, v.next_free_node, r.origin, depart, tts)
            if dh is None:
                continue
            dh_path, dh_time, dh_dist = dh
            arrival = depart + dh_time
            if arrival > r.t_r + cfg.dt_max_wait_s:
                continue
            w = pair_weight(cfg, r.d_od_m, dh_dist)
            if w < 0 and not cfg.force_serve:
                continue
            pairs[(vi, ri)] = (w, dh_path, arrival, dh_dist)
    return pairs


def match_pairs(
    n_vehicles: int, n_requests: int, weights: dict[tuple[int, int], float]
) -> list[tuple[int, int]]:
    """Maximum-total-weight one-to-one matching over the admissible pairs.

    Solved as a rectangular assignment on a square matrix padded with
    zero-value dummies, so leaving a vehicle or request unmatched costs
    nothing and inadmissible pairs are never forced.
    """
    if not weights:
        return []
    n = n_vehicles + n_requests
    m = np.zeros((n, n))
    m[:n_vehicles, :n_requests] = -1.0  # worse than any dummy, never selected
    for (vi, ri), w in weights.items():
        m[vi, ri] = w
    rows, cols = linear_sum_assignment(m, maximize=True)
    return [
        (int(vi), int(ri))
        for vi, ri in zip(rows, cols)
        if vi < n_vehicles and ri < n_requests and (vi, ri) in weights
    ]


def _cell_anchor_nodes(net: RoadNetwork, grid: GridPartition) -> dict[int, int]:
    """For each populated cell, the node nearest to the cell centroid."""
    by_cell: dict[int, list[int]] = {}
    for nid, cell in grid.node_cell.items():
        by_cell.setdefault(cell, []).append(nid)
    deg_lat = grid.cell_size_m / (math.pi / 180.0 * 6_371_000.0)
    deg_lon = deg_lat / math.cos(math.radians(grid.origin_lat))
    anchors: dict[int, int] = {}
    for cell, nids in by_cell.items():
        r, c = divmod(cell, grid.n_cols)
        center_lon = grid.origin_lon + (c + 0.5) * deg_lon
        center_lat = grid.origin_lat + (r + 0.5) * deg_lat
        anchors[cell] = min(
            nids,
            key=lambda n: (
                (net.nodes[n].lon - center_lon) ** 2 + (net.nodes[n].lat - center_lat) ** 2,
                n,
            ),
        )
    return anchors


def reposition(
    net: RoadNetwork,
    grid: GridPartition,
    vehicles: list[Vehicle],
    clock: float,
    tts: TravelTimeSource,
) -> list[tuple[Vehicle, Leg]]:
    """Move surplus idle vehicles toward a floor-equal share per populated cell.

    Surplus vehicles are handled in vehicle-id order; each goes to the
    nearest deficit cell, ties broken by cell id. Returns the committed
    reposition legs (already applied to the vehicles).
    """
    anchors = _cell_anchor_nodes(net, grid)
    cells = sorted(anchors)
    idle = [v for v in vehicles if v.next_free_time <= clock]
    if not idle or not cells:
        return []
    target = len(idle) // len(cells)
    by_cell: dict[int, list[Vehicle]] = {c: [] for c in cells}
    for v in idle:
        by_cell[grid.cell_of(v.next_free_node)].append(v)
    surplus: list[Vehicle] = []
    deficit: dict[int, int] = {}
    for c in cells:
        vs = sorted(by_cell[c], key=lambda v: v.id)
        if len(vs) > target:
            surplus.extend(vs[target:])
        elif len(vs) < target:
            deficit[c] = target - len(vs)

    moves: list[tuple[Vehicle, Leg]] = []
    for v in sorted(surplus, key=lambda v: v.id):
        if not deficit:
            break
        best: Optional[tuple[float, int, tuple[int, ...], float, float]] = None
        for c in sorted(deficit):
            rt = route(net, v.next_free_node, anchors[c], clock, tts)
            if rt is None:
                continue
            path, secs, dist = rt
            if best is None or secs < best[0]:
                best = (secs, c, path, dist, clock + secs)
        if best is None:
            continue
        secs, c, path, dist, eta = best
        leg = Leg(
            kind="reposition",
            path=path,
            start_node=v.next_free_node,
            end_node=anchors[c],
            start_time=clock,
            end_time=eta,
            distance_m=dist,
        )
        v.add_leg(leg)
        moves.append((v, leg))
        deficit[c] -= 1
        if deficit[c] == 0:
            del deficit[c]
    return moves


def initial_fleet(
    net: RoadNetwork, grid: GridPartition, cfg: SimConfig, start_time: float
) -> list[Vehicle]:
    """Round-robin placement over populated cells in a seeded shuffled order."""
    anchors = _cell_anchor_nodes(net, grid)
    cells = sorted(anchors)
    rng = random.Random(cfg.seed)
    rng.shuffle(cells)
    return [
        Vehicle(id=i, next_free_node=anchors[cells[i % len(cells)]], next_free_time=start_time)
        for i in range(cfg.fleet_size)
    ]


def compute_profit(
    cfg: SimConfig, served: list[Request], vehicles: list[Vehicle]
) -> float:
    revenue = sum(cfg.base_fare + cfg.fare_per_km * r.d_od_m / 1000.0 for r in served)
    cost = sum(
        cfg.fixed_cost_per_vehicle_day * cfg.n_days + cfg.cost_per_km * v.odometer_m / 1000.0
        for v in vehicles
    )
    return revenue - cost


def run(
    cfg: SimConfig,
    requests: list[Request],
    net: RoadNetwork,
    grid: GridPartition,
    tts: TravelTimeSource,
) -> SimResult:
    """Advance the clock in batch steps, assigning and repositioning as configured."""
    events: list[tuple[float, str, str, str]] = []
    requests = sorted(requests, key=lambda r: (r.t_r, r.id))

    if requests:
        t0 = math.floor(requests[0].t_r / cfg.dt_batch_s) * cfg.dt_batch_s
        t_end = requests[-1].t_r
    else:
        t0 = 0.0
        t_end = 0.0
    tts.check_coverage(t0, t_end)

    vehicles = initial_fleet(net, grid, cfg, t0)
    for r in requests:
        events.append((r.t_r, f"request:{r.id}", "request", f"{r.origin}->{r.dest}"))

    served: list[Request] = []
    rejected = 0
    next_idx = 0
    clock = t0
    while next_idx < len(requests):
        clock += cfg.dt_batch_s
        batch: list[Request] = []
        while next_idx < len(requests) and requests[next_idx].t_r <= clock:
            batch.append(requests[next_idx])
            next_idx += 1
        if batch:
            weights_full = build_weight_matrix(net, vehicles, batch, clock, tts, cfg)
            weights = {k: v[0] for k, v in weights_full.items()}
            matched = match_pairs(len(vehicles), len(batch), weights)
            matched_requests = set()
            for vi, ri in matched:
                v, r = vehicles[vi], batch[ri]
                w, dh_path, arrival, dh_dist = weights_full[(vi, ri)]
                depart = max(clock, v.next_free_time)
                pickup_t = max(arrival, r.t_r)
                v.add_leg(
                    Leg(
                        kind="pickup",
                        path=dh_path,
                        start_node=v.next_free_node,
                        end_node=r.origin,
                        start_time=depart,
                        end_time=pickup_t,
                        distance_m=dh_dist,
                    )
                )
                trip = route(net, r.origin, r.dest, pickup_t, tts)
                if trip is None:
                    raise SimulationError(f"request {r.id}: destination unreachable")
                trip_path, trip_time, trip_dist = trip
                v.add_leg(
                    Leg(
                        kind="dropoff",
                        path=trip_path,
                        start_node=r.origin,
                        end_node=r.dest,
                        start_time=pickup_t,
                        end_time=pickup_t + trip_time,
                        distance_m=trip_dist,
                    )
                )
                r.status = "served"
                r.vehicle_id = v.id
                r.pickup_time = pickup_t
                r.dropoff_time = pickup_t + trip_time
                served.append(r)
                matched_requests.add(r.id)
                events.append(
                    (clock, f"vehicle:{v.id}", "assign", f"request={r.id};weight={w!r}")
                )
                events.append(
                    (pickup_t, f"request:{r.id}", "pickup",
                     f"vehicle={v.id};wait_s={pickup_t - r.t_r!r}")
                )
                events.append(
                    (r.dropoff_time, f"request:{r.id}", "dropoff",
                     f"vehicle={v.id};d_od_m={r.d_od_m!r};leg_dist_m={trip_dist!r};"
                     f"deadhead_m={dh_dist!r}")
                )
            for r in batch:
                if r.id not in matched_requests:
                    r.status = "rejected"
                    rejected += 1
                    events.append((clock, f"request:{r.id}", "reject", ""))
        if cfg.dt_reposition_s > 0 and (clock - t0) % cfg.dt_reposition_s == 0:
            for v, leg in reposition(net, grid, vehicles, clock, tts):
                events.append(
                    (clock, f"vehicle:{v.id}", "reposition",
                     f"to={leg.end_node};dist_m={leg.distance_m!r}")
                )

    for v in vehicles:
        events.append(
            (v.next_free_time, f"vehicle:{v.id}", "odometer", f"total_m={v.odometer_m!r}")
        )

    profit = compute_profit(cfg, served, vehicles)
    waits = {r.id: r.pickup_time - r.t_r for r in served}
    result = SimResult(
        served_ids=[r.id for r in served],
        rejected=rejected,
        profit=profit,
        waits_s=waits,
        vehicle_distance_m={v.id: v.odometer_m for v in vehicles},
        service_rate=len(served) / len(requests) if requests else 0.0,
        mean_wait_s=sum(waits.values()) / len(waits) if waits else 0.0,
        events=sorted(events, key=lambda e: (e[0], e[1], e[2])),
    )
    return result


def write_event_log(path: str, events: list[tuple[float, str, str, str]]) -> None:
    import csv

    with open(path, "w", newline="") as f:
        wr = csv.writer(f)
        wr.writerow(["time", "entity", "event", "detail"])
        for t, entity, event, detail in events:
            wr.writerow([repr(t), entity, event, detail])


def profit_from_events(
    cfg: SimConfig, events: list[tuple[float, str, str, str]]
) -> float:
    """Recompute the profit objective from the event log alone."""
    revenue = 0.0
    cost = 0.0
    n_vehicles = 0
    for _, entity, event, detail in events:
        fields = dict(kv.split("=") for kv in detail.split(";") if "=" in kv)
        if event == "dropoff":
            revenue += cfg.base_fare + cfg.fare_per_km * float(fields["d_od_m"]) / 1000.0
        elif event == "odometer":
            n_vehicles += 1
            cost += cfg.cost_per_km * float(fields["total_m"]) / 1000.0
    cost += cfg.fixed_cost_per_vehicle_day * cfg.n_days * n_vehicles
    return revenue - cost
