import math
import random

import pytest

from netscale.grid import build_grid, classify_edges
from netscale.network import (
    EdgeRecord,
    NodeRecord,
    RoadNetwork,
    TravelTimeLayer,
    path_travel_time,
    shortest_path,
)
from netscale.trips import ODTarget, TripGroup

# meters per degree of latitude under the equirectangular projection
M_PER_DEG = math.pi / 180.0 * 6_371_000.0


def make_network(nodes, edges) -> RoadNetwork:
    """nodes: (id, lon, lat); edges: (id, from, to, length_m, speed_mps)."""
    return RoadNetwork(
        nodes={n[0]: NodeRecord(*n) for n in nodes},
        edges={e[0]: EdgeRecord(*e) for e in edges},
    )


def lattice_network(n=10, block_m=200.0, speed_mps=10.0) -> RoadNetwork:
    """n x n street lattice at the equator with both directions per segment."""
    ddeg = block_m / M_PER_DEG
    nodes = []
    for r in range(n):
        for c in range(n):
            nodes.append((r * n + c, c * ddeg, r * ddeg))
    edges = []
    eid = 0
    for r in range(n):
        for c in range(n):
            u = r * n + c
            for v in ((r, c + 1), (r + 1, c)):
                if v[0] < n and v[1] < n:
                    w = v[0] * n + v[1]
                    edges.append((eid, u, w, block_m, speed_mps))
                    eid += 1
                    edges.append((eid, w, u, block_m, speed_mps))
                    eid += 1
    return make_network(nodes, edges)


def random_layer(net: RoadNetwork, rng: random.Random, lo=1.0, hi=3.0,
                 period_start=0.0) -> TravelTimeLayer:
    return TravelTimeLayer(
        period_start=period_start,
        factors={eid: rng.uniform(lo, hi) for eid in net.edges},
    )


def consistent_group(net, rng, layer, n_trips, period_start=0.0,
                     node_pool=None) -> TripGroup:
    """Targets generated exactly from the layer on shortest-distance paths."""
    pool = sorted(node_pool) if node_pool is not None else sorted(net.nodes)
    seen: dict[tuple[int, int], ODTarget] = {}
    attempts = 0
    while len(seen) < n_trips and attempts < n_trips * 50:
        attempts += 1
        o, d = rng.sample(pool, 2)
        if (o, d) in seen:
            continue
        sp = shortest_path(net, o, d, weight="distance")
        if sp is None or not sp[0]:
            continue
        path = tuple(sp[0])
        t = path_travel_time(net, list(path), layer)
        seen[(o, d)] = ODTarget(o, d, t, path, (t,))
    assert len(seen) >= n_trips
    return TripGroup(period_start=period_start, targets=list(seen.values()))


def random_digraph(rng: random.Random, n_nodes: int, p_edge=0.3,
                   max_w=20) -> RoadNetwork:
    """Random directed graph with integer edge lengths (exact float sums)."""
    nodes = [(i, i * 0.001, (i % 7) * 0.001) for i in range(n_nodes)]
    edges = []
    eid = 0
    for u in range(n_nodes):
        for v in range(n_nodes):
            if u != v and rng.random() < p_edge:
                edges.append((eid, u, v, float(rng.randint(1, max_w)), 1.0))
                eid += 1
    if not edges:
        edges.append((0, 0, 1 % n_nodes if n_nodes > 1 else 0, 1.0, 1.0))
    return make_network(nodes, edges)


def floyd_warshall(net: RoadNetwork, weight="distance"):
    """Cubic all-pairs oracle, independent of the Dijkstra implementation."""
    ids = sorted(net.nodes)
    idx = {n: i for i, n in enumerate(ids)}
    inf = float("inf")
    n = len(ids)
    dist = [[inf] * n for _ in range(n)]
    for i in range(n):
        dist[i][i] = 0.0
    for e in net.edges.values():
        w = e.length_m if weight == "distance" else e.freeflow_time_s
        i, j = idx[e.from_node], idx[e.to_node]
        dist[i][j] = min(dist[i][j], w)
    for k in range(n):
        for i in range(n):
            dik = dist[i][k]
            if dik == inf:
                continue
            row_k = dist[k]
            row_i = dist[i]
            for j in range(n):
                alt = dik + row_k[j]
                if alt < row_i[j]:
                    row_i[j] = alt
    return ids, dist


def brute_force_matching(n_vehicles, n_requests, weights):
    """Best total weight over all one-to-one pair subsets (exponential)."""
    pairs = sorted(weights)
    best = 0.0

    def rec(i, used_v, used_r, total):
        nonlocal best
        best = max(best, total)
        if i == len(pairs):
            return
        for j in range(i, len(pairs)):
            v, r = pairs[j]
            if v in used_v or r in used_r:
                continue
            rec(j + 1, used_v | {v}, used_r | {r}, total + weights[(v, r)])

    rec(0, frozenset(), frozenset(), 0.0)
    return best


def write_network_csvs(tmp_path, net: RoadNetwork):
    nodes_path = tmp_path / "nodes.csv"
    edges_path = tmp_path / "edges.csv"
    with open(nodes_path, "w") as f:
        f.write("node_id,lon,lat\n")
        for n in net.nodes.values():
            f.write(f"{n.id},{n.lon!r},{n.lat!r}\n")
    with open(edges_path, "w") as f:
        f.write("edge_id,from_node,to_node,length_m,freeflow_speed_mps\n")
        for e in net.edges.values():
            f.write(f"{e.id},{e.from_node},{e.to_node},{e.length_m!r},{e.freeflow_speed_mps!r}\n")
    return str(nodes_path), str(edges_path)


def write_trips_csv(tmp_path, rows, name="trips.csv"):
    """rows: (iso datetime, olon, olat, dlon, dlat, duration_s, distance_m)."""
    path = tmp_path / name
    with open(path, "w") as f:
        f.write("pickup_datetime,origin_lon,origin_lat,dest_lon,dest_lat,duration_s,distance_m\n")
        for r in rows:
            f.write(",".join(str(x) for x in r) + "\n")
    return str(path)


def write_e2e_dataset(tmp_path, n=6, block_m=250.0, n_trips=40, seed=0,
                      factor=1.6, start_iso="2016-06-06T09:00:00",
                      span_s=3600.0):
    """Write network + on-network trips CSVs whose durations come from a
    known uniform ground-truth factor. Returns (nodes, edges, trips) paths."""
    from datetime import datetime, timedelta, timezone

    net = lattice_network(n=n, block_m=block_m)
    nodes_path, edges_path = write_network_csvs(tmp_path, net)
    rng = random.Random(seed)
    t0 = datetime.fromisoformat(start_iso).replace(tzinfo=timezone.utc)
    rows = []
    ids = sorted(net.nodes)
    while len(rows) < n_trips:
        o, d = rng.sample(ids, 2)
        sp = shortest_path(net, o, d, weight="distance")
        if sp is None or not sp[0]:
            continue
        path, dist = sp
        duration = factor * path_travel_time(net, path)
        ts = t0 + timedelta(seconds=rng.uniform(0, span_s - 1))
        rows.append((
            ts.strftime("%Y-%m-%dT%H:%M:%S"),
            repr(net.nodes[o].lon), repr(net.nodes[o].lat),
            repr(net.nodes[d].lon), repr(net.nodes[d].lat),
            repr(duration), repr(dist),
        ))
    trips_path = write_trips_csv(tmp_path, rows)
    return nodes_path, edges_path, trips_path


@pytest.fixture
def lattice10():
    return lattice_network(n=10)


@pytest.fixture
def small_grid(lattice10):
    grid = build_grid(lattice10, cell_size_m=600.0)
    return grid, classify_edges(lattice10, grid)
