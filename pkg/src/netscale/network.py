"""Directed road network: CSV ingestion, shortest paths, scaled travel times.

The network is immutable after loading; shortest-path queries are read-only
and safe to run from multiple workers.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from heapq import heappop, heappush
from typing import Iterable, Optional

import numpy as np

EARTH_RADIUS_M = 6_371_000.0


class NetworkError(Exception):
    """Malformed, inconsistent or out-of-domain network input."""


class PathError(Exception):
    """A supplied edge sequence is not a connected chain in the network."""


@dataclass(frozen=True)
class NodeRecord:
    id: int
    lon: float
    lat: float


@dataclass(frozen=True)
class EdgeRecord:
    id: int
    from_node: int
    to_node: int
    length_m: float
    freeflow_speed_mps: float

    @property
    def freeflow_time_s(self) -> float:
        return self.length_m / self.freeflow_speed_mps


@dataclass(frozen=True)
class TravelTimeLayer:
    """Per-period multiplicative factors on edge free-flow times.

    Every edge of the owning network has a factor; factors are >= 1 so the
    layer can only slow the network down relative to free flow.
    """

    period_start: float
    factors: dict[int, float]

    def factor(self, edge_id: int) -> float:
        return self.factors[edge_id]


@dataclass
class RoadNetwork:
    nodes: dict[int, NodeRecord]
    edges: dict[int, EdgeRecord]
    # node id -> outgoing edge ids, sorted by (to_node, edge_id) for determinism
    adjacency: dict[int, list[int]] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not self.adjacency:
            adj: dict[int, list[int]] = {nid: [] for nid in self.nodes}
            for e in self.edges.values():
                adj[e.from_node].append(e.id)
            for nid in adj:
                adj[nid].sort(key=lambda eid: (self.edges[eid].to_node, eid))
            self.adjacency = adj
        self._node_ids = np.array(sorted(self.nodes), dtype=np.int64)
        lons = np.array([self.nodes[i].lon for i in self._node_ids])
        lats = np.array([self.nodes[i].lat for i in self._node_ids])
        self._node_xy = np.column_stack(lonlat_to_xy(lons, lats, lons.min() if len(lons) else 0.0,
                                                     lats.mean() if len(lats) else 0.0))
        self._ref_lon = float(lons.min()) if len(lons) else 0.0
        self._ref_lat = float(lats.mean()) if len(lats) else 0.0

    def nearest_node(self, lon: float, lat: float) -> tuple[int, float]:
        """Nearest node by equirectangular distance; returns (node_id, meters)."""
        x, y = lonlat_to_xy(np.array([lon]), np.array([lat]), self._ref_lon, self._ref_lat)
        d2 = (self._node_xy[:, 0] - x[0]) ** 2 + (self._node_xy[:, 1] - y[0]) ** 2
        i = int(np.argmin(d2))
        return int(self._node_ids[i]), float(math.sqrt(d2[i]))


def lonlat_to_xy(lon: np.ndarray, lat: np.ndarray, ref_lon: float, ref_lat: float):
    """Equirectangular projection to meters, adequate at city scale."""
    x = np.radians(lon - ref_lon) * math.cos(math.radians(ref_lat)) * EARTH_RADIUS_M
    y = np.radians(lat - ref_lat) * EARTH_RADIUS_M
    return x, y


def load_network(nodes_path: str, edges_path: str) -> RoadNetwork:
    """Load a directed network from the two-file CSV schema.

    nodes: ``node_id,lon,lat``; edges:
    ``edge_id,from_node,to_node,length_m,freeflow_speed_mps``.
    """
    nodes: dict[int, NodeRecord] = {}
    with open(nodes_path, newline="") as f:
        for i, row in enumerate(csv.DictReader(f)):
            try:
                nid = int(row["node_id"])
                lon, lat = float(row["lon"]), float(row["lat"])
            except (KeyError, TypeError, ValueError) as exc:
                raise NetworkError(f"{nodes_path}: malformed node row {i + 2}: {row}") from exc
            if not (math.isfinite(lon) and math.isfinite(lat)):
                raise NetworkError(f"{nodes_path}: non-finite coordinates in row {i + 2}")
            if nid in nodes:
                raise NetworkError(f"{nodes_path}: duplicate node id {nid}")
            nodes[nid] = NodeRecord(nid, lon, lat)

    edges: dict[int, EdgeRecord] = {}
    with open(edges_path, newline="") as f:
        for i, row in enumerate(csv.DictReader(f)):
            try:
                eid = int(row["edge_id"])
                u, v = int(row["from_node"]), int(row["to_node"])
                length = float(row["length_m"])
                speed = float(row["freeflow_speed_mps"])
            except (KeyError, TypeError, ValueError) as exc:
                raise NetworkError(f"{edges_path}: malformed edge row {i + 2}: {row}") from exc
            if u not in nodes or v not in nodes:
                raise NetworkError(f"edge {eid} references missing node {u if u not in nodes else v}")
            if length <= 0 or speed <= 0:
                raise NetworkError(f"edge {eid}: nonpositive length or speed")
            if u == v:
                raise NetworkError(f"edge {eid}: self-loop {u}->{v}")
            if eid in edges:
                raise NetworkError(f"{edges_path}: duplicate edge id {eid}")
            edges[eid] = EdgeRecord(eid, u, v, length, speed)

    return RoadNetwork(nodes=nodes, edges=edges)


def edge_weight_fn(net: RoadNetwork, weight: str, layer: Optional[TravelTimeLayer] = None):
    """Return edge_id -> weight for ``distance``, ``freeflow`` or ``scaled_time``."""
    if weight == "distance":
        return lambda eid: net.edges[eid].length_m
    if weight == "freeflow":
        return lambda eid: net.edges[eid].freeflow_time_s
    if weight == "scaled_time":
        if layer is None:
            raise ValueError("scaled_time weight requires a TravelTimeLayer")
        return lambda eid: layer.factor(eid) * net.edges[eid].freeflow_time_s
    raise ValueError(f"unknown weight selector {weight!r}")


def shortest_path(
    net: RoadNetwork,
    origin: int,
    dest: int,
    weight: str = "distance",
    layer: Optional[TravelTimeLayer] = None,
) -> Optional[tuple[list[int], float]]:
    """Dijkstra from origin to dest; returns (edge id sequence, total weight).

    Returns None when dest is unreachable. Ties between equal-weight paths
    break toward the smaller predecessor node id, so results are stable
    across runs and platforms.
    """
    if origin not in net.nodes or dest not in net.nodes:
        raise NetworkError(f"unknown node in query {origin}->{dest}")
    if origin == dest:
        return [], 0.0
    w = edge_weight_fn(net, weight, layer)

    dist: dict[int, float] = {origin: 0.0}
    pred: dict[int, tuple[int, int]] = {}  # node -> (pred node, via edge)
    done: set[int] = set()
    heap: list[tuple[float, int, int]] = [(0.0, origin, origin)]
    while heap:
        d, u_pred, u = heappop(heap)
        if u in done:
            continue
        done.add(u)
        if u == dest:
            break
        for eid in net.adjacency[u]:
            v = net.edges[eid].to_node
            if v in done:
                continue
            dv = d + w(eid)
            if v not in dist or dv < dist[v] or (dv == dist[v] and u < pred[v][0]):
                dist[v] = dv
                pred[v] = (u, eid)
                heappush(heap, (dv, u, v))
    if dest not in done:
        return None
    path: list[int] = []
    node = dest
    while node != origin:
        p, eid = pred[node]
        path.append(eid)
        node = p
    path.reverse()
    return path, dist[dest]


def _check_chain(net: RoadNetwork, path: Iterable[int]) -> None:
    prev_to: Optional[int] = None
    for eid in path:
        e = net.edges[eid]
        if prev_to is not None and e.from_node != prev_to:
            raise PathError(f"edge {eid} does not continue from node {prev_to}")
        prev_to = e.to_node


def path_travel_time(
    net: RoadNetwork, path: list[int], layer: Optional[TravelTimeLayer] = None
) -> float:
    """Sum of (factor * freeflow time) over the path; factor 1 without a layer."""
    _check_chain(net, path)
    if layer is None:
        return sum(net.edges[eid].freeflow_time_s for eid in path)
    return sum(layer.factor(eid) * net.edges[eid].freeflow_time_s for eid in path)


def path_distance(net: RoadNetwork, path: list[int]) -> float:
    _check_chain(net, path)
    return sum(net.edges[eid].length_m for eid in path)


def validate_layer(net: RoadNetwork, layer: TravelTimeLayer, min_speed_mps: float) -> None:
    """Check layer totality and the factor box against the minimum-speed cap."""
    for eid, e in net.edges.items():
        if eid not in layer.factors:
            raise NetworkError(f"layer missing factor for edge {eid}")
        x = layer.factors[eid]
        cap = e.freeflow_speed_mps / min_speed_mps
        if x < 1.0 - 1e-12 or x > cap + 1e-9:
            raise NetworkError(f"edge {eid}: factor {x} outside [1, {cap}]")


def write_layer_csv(path: str, layer: TravelTimeLayer) -> None:
    with open(path, "w", newline="") as f:
        wr = csv.writer(f)
        wr.writerow(["period_start_epoch_s", "edge_id", "factor"])
        for eid in sorted(layer.factors):
            wr.writerow([f"{layer.period_start:.0f}", eid, repr(layer.factors[eid])])


def read_layer_csv(path: str) -> TravelTimeLayer:
    factors: dict[int, float] = {}
    period_start = 0.0
    with open(path, newline="") as f:
        for row in csv.DictReader(f):
            period_start = float(row["period_start_epoch_s"])
            factors[int(row["edge_id"])] = float(row["factor"])
    return TravelTimeLayer(period_start=period_start, factors=factors)
