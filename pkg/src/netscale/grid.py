"""Regular spatial grid over the network and edge-to-cell classification."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .network import RoadNetwork


@dataclass
class GridPartition:
    origin_lon: float
    origin_lat: float
    cell_size_m: float
    n_cols: int
    n_rows: int
    node_cell: dict[int, int] = field(default_factory=dict)  # node id -> cell id

    @property
    def n_cells(self) -> int:
        return self.n_cols * self.n_rows

    def cell_of(self, node_id: int) -> int:
        return self.node_cell[node_id]


@dataclass
class EdgeZoneIndex:
    single_zone: dict[int, int]  # edge id -> cell id, both endpoints in one cell
    multi_zone: dict[int, frozenset[int]]  # edge id -> endpoint cell set


def build_grid(net: RoadNetwork, cell_size_m: float) -> GridPartition:
    """Regular grid anchored at the node bounding box's south-west corner."""
    if cell_size_m <= 0:
        raise ValueError("cell_size_m must be positive")
    if not net.nodes:
        raise ValueError("network has no nodes")
    lons = np.array([n.lon for n in net.nodes.values()])
    lats = np.array([n.lat for n in net.nodes.values()])
    origin_lon, origin_lat = float(lons.min()), float(lats.min())
    ref_lat = float(lats.mean())
    xs = np.radians(lons - origin_lon) * math.cos(math.radians(ref_lat)) * 6_371_000.0
    ys = np.radians(lats - origin_lat) * 6_371_000.0
    n_cols = max(1, int(math.ceil(xs.max() / cell_size_m))) if xs.max() > 0 else 1
    n_rows = max(1, int(math.ceil(ys.max() / cell_size_m))) if ys.max() > 0 else 1
    cols = np.minimum((xs // cell_size_m).astype(int), n_cols - 1)
    rows = np.minimum((ys // cell_size_m).astype(int), n_rows - 1)
    node_cell = {
        nid: int(r) * n_cols + int(c)
        for nid, r, c in zip(net.nodes.keys(), rows, cols)
    }
    return GridPartition(
        origin_lon=origin_lon,
        origin_lat=origin_lat,
        cell_size_m=cell_size_m,
        n_cols=n_cols,
        n_rows=n_rows,
        node_cell=node_cell,
    )


def classify_edges(net: RoadNetwork, grid: GridPartition) -> EdgeZoneIndex:
    """Split E into single-cell and multi-cell edges by endpoint cells only."""
    single: dict[int, int] = {}
    multi: dict[int, frozenset[int]] = {}
    for e in net.edges.values():
        cu = grid.cell_of(e.from_node)
        cv = grid.cell_of(e.to_node)
        if cu == cv:
            single[e.id] = cu
        else:
            multi[e.id] = frozenset({cu, cv})
    return EdgeZoneIndex(single_zone=single, multi_zone=multi)


def cells_geojson(
    grid: GridPartition, cell_values: dict[int, float] | None = None
) -> dict:
    """GeoJSON FeatureCollection of grid cells with optional per-cell values."""
    deg_lat = grid.cell_size_m / (math.pi / 180.0 * 6_371_000.0)
    deg_lon = deg_lat / math.cos(math.radians(grid.origin_lat))
    features = []
    for cell in range(grid.n_cells):
        r, c = divmod(cell, grid.n_cols)
        w = grid.origin_lon + c * deg_lon
        s = grid.origin_lat + r * deg_lat
        ring = [
            [w, s],
            [w + deg_lon, s],
            [w + deg_lon, s + deg_lat],
            [w, s + deg_lat],
            [w, s],
        ]
        props: dict = {"cell_id": cell}
        if cell_values is not None and cell in cell_values:
            props["value"] = cell_values[cell]
        features.append(
            {
                "type": "Feature",
                "geometry": {"type": "Polygon", "coordinates": [ring]},
                "properties": props,
            }
        )
    return {"type": "FeatureCollection", "features": features}


def write_cells_geojson(path: str, grid: GridPartition, cell_values=None) -> None:
    with open(path, "w") as f:
        json.dump(cells_geojson(grid, cell_values), f)
