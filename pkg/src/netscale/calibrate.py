"""Per-period edge scaling factors: mean-factor, least-squares and L1 methods.

All three methods emit a full factor map over E. The optimizers act on the
edges observed in the period's shortest paths (E_u); everything else is
filled by the three-tier spatial fallback.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import sparse
from scipy.optimize import linprog, lsq_linear

from .grid import EdgeZoneIndex, GridPartition
from .network import RoadNetwork, TravelTimeLayer
from .trips import TripGroup

log = logging.getLogger(__name__)

METHODS = ("mfm", "ssm", "asm")

# secondary objective weight making L1 optima unique (prefer smaller factors)
ASM_TIEBREAK_WEIGHT = 1e-9


class SolverError(Exception):
    """Optimizer failed to reach the requested tolerance."""


@dataclass
class CalibConfig:
    dt_scale_s: float = 1800.0
    cell_size_m: float = 1000.0
    min_speed_mps: float = 0.5  # floor on scaled edge speed; cap = v_flow / this
    solver_tol: float = 1e-8
    solver_max_iter: int = 10_000

    def __post_init__(self) -> None:
        for name in ("dt_scale_s", "cell_size_m", "min_speed_mps", "solver_tol"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


@dataclass
class ScalingSolution:
    period_start: float
    method: str
    factors: dict[int, float]
    f_mean: Optional[float] = None
    objective_value: Optional[float] = None
    # edge id -> optimized | zone_mean | multizone_mean | global_mean
    provenance: dict[int, str] = field(default_factory=dict)
    n_targets: int = 0
    n_observed_edges: int = 0
    wall_time_s: float = 0.0
    carried_forward: bool = False

    def to_layer(self) -> TravelTimeLayer:
        return TravelTimeLayer(period_start=self.period_start, factors=dict(self.factors))

    def tier_counts(self) -> dict[str, int]:
        counts: dict[str, int] = {}
        for tag in self.provenance.values():
            counts[tag] = counts.get(tag, 0) + 1
        return counts

    def sidecar(self) -> dict:
        return {
            "period_start_epoch_s": self.period_start,
            "method": self.method,
            "objective_value": self.objective_value,
            "f_mean": self.f_mean,
            "n_targets": self.n_targets,
            "n_observed_edges": self.n_observed_edges,
            "tier_counts": self.tier_counts(),
            "wall_time_s": self.wall_time_s,
            "carried_forward": self.carried_forward,
        }


def factor_cap(net: RoadNetwork, edge_id: int, cfg: CalibConfig) -> float:
    """Upper bound on the factor: scaled speed may not drop below min_speed."""
    return net.edges[edge_id].freeflow_speed_mps / cfg.min_speed_mps


def _clamp(net: RoadNetwork, edge_id: int, x: float, cfg: CalibConfig) -> float:
    return min(max(x, 1.0), factor_cap(net, edge_id, cfg))


def _path_freeflow(net: RoadNetwork, path) -> float:
    return sum(net.edges[eid].freeflow_time_s for eid in path)


def compute_mfm(group: TripGroup, net: RoadNetwork, cfg: CalibConfig) -> ScalingSolution:
    """One global factor: sum of recorded durations over sum of free-flow times.

    Sums run over all member trips, so duplicated OD pairs keep their full
    weight even though the group stores them as one averaged target.
    """
    if not group.targets:
        raise ValueError("compute_mfm: empty group")
    t_data = sum(t.duration_s * t.n_trips for t in group.targets)
    t_flow = sum(_path_freeflow(net, t.path) * t.n_trips for t in group.targets)
    f_mean = t_data / t_flow
    factors = {eid: _clamp(net, eid, f_mean, cfg) for eid in net.edges}
    return ScalingSolution(
        period_start=group.period_start,
        method="mfm",
        factors=factors,
        f_mean=f_mean,
        provenance={eid: "optimized" for eid in net.edges},
        n_targets=len(group.targets),
        n_observed_edges=len(group.union_edges),
    )


def _target_matrix(group: TripGroup, net: RoadNetwork):
    """Sparse (targets x observed edges) matrix of free-flow times, plus bounds data."""
    edge_ids = sorted(group.union_edges)
    col = {eid: j for j, eid in enumerate(edge_ids)}
    rows, cols, vals = [], [], []
    for i, tgt in enumerate(group.targets):
        for eid in tgt.path:
            rows.append(i)
            cols.append(col[eid])
            vals.append(net.edges[eid].freeflow_time_s)
    a = sparse.csr_matrix(
        (vals, (rows, cols)), shape=(len(group.targets), len(edge_ids))
    )
    b = np.array([tgt.duration_s for tgt in group.targets])
    return edge_ids, a, b


def solve_ssm(
    group: TripGroup, net: RoadNetwork, grid: GridPartition, zones: EdgeZoneIndex, cfg: CalibConfig
) -> ScalingSolution:
    """Box-constrained least squares over the observed edges, then fallback fill."""
    if not group.targets:
        raise ValueError("solve_ssm: empty group")
    edge_ids, a, b = _target_matrix(group, net)
    lo = np.ones(len(edge_ids))
    hi = np.array([factor_cap(net, eid, cfg) for eid in edge_ids])
    dense = a.shape[0] * a.shape[1] <= 2_000_000
    if dense:
        # active-set solver, exact on problems of this size
        res = lsq_linear(a.toarray(), b, bounds=(lo, hi), method="bvls",
                         tol=cfg.solver_tol, max_iter=cfg.solver_max_iter)
    else:
        res = lsq_linear(a, b, bounds=(lo, hi), method="trf", lsq_solver="lsmr",
                         tol=cfg.solver_tol, max_iter=cfg.solver_max_iter)
    if res.status <= 0:
        raise SolverError(f"ssm: no convergence within {cfg.solver_max_iter} iterations")
    x = np.clip(res.x, lo, hi)
    partial = {eid: float(x[j]) for j, eid in enumerate(edge_ids)}
    factors, provenance = fallback_fill(partial, zones, net, cfg)
    objective = float(np.sum((a @ x - b) ** 2))
    return ScalingSolution(
        period_start=group.period_start,
        method="ssm",
        factors=factors,
        objective_value=objective,
        provenance=provenance,
        n_targets=len(group.targets),
        n_observed_edges=len(edge_ids),
    )


def solve_asm(
    group: TripGroup, net: RoadNetwork, grid: GridPartition, zones: EdgeZoneIndex, cfg: CalibConfig
) -> ScalingSolution:
    """L1 regression via residual splitting, solved as a linear program.

    Variables are (x, u, v) with a @ x + u - v = b and u, v >= 0; minimizing
    sum(u + v) minimizes the sum of absolute residuals. A tiny weight on
    sum(x) makes the (often non-unique) L1 optimum deterministic, preferring
    the smallest feasible factors.
    """
    if not group.targets:
        raise ValueError("solve_asm: empty group")
    edge_ids, a, b = _target_matrix(group, net)
    n, m = len(edge_ids), len(group.targets)
    a_eq = sparse.hstack([a, sparse.eye(m), -sparse.eye(m)], format="csc")
    c = np.concatenate([np.full(n, ASM_TIEBREAK_WEIGHT), np.ones(2 * m)])
    bounds = [(1.0, factor_cap(net, eid, cfg)) for eid in edge_ids] + [(0, None)] * (2 * m)
    res = linprog(c, A_eq=a_eq, b_eq=b, bounds=bounds, method="highs")
    if not res.success:
        raise SolverError(f"asm: LP failed: {res.message}")
    x = np.clip(res.x[:n], 1.0, [factor_cap(net, eid, cfg) for eid in edge_ids])
    partial = {eid: float(x[j]) for j, eid in enumerate(edge_ids)}
    factors, provenance = fallback_fill(partial, zones, net, cfg)
    objective = float(np.sum(np.abs(a @ x - b)))
    return ScalingSolution(
        period_start=group.period_start,
        method="asm",
        factors=factors,
        objective_value=objective,
        provenance=provenance,
        n_targets=len(group.targets),
        n_observed_edges=len(edge_ids),
    )


def fallback_fill(
    partial: dict[int, float],
    zones: EdgeZoneIndex,
    net: RoadNetwork,
    cfg: CalibConfig,
) -> tuple[dict[int, float], dict[int, str]]:
    """Extend optimized factors over the observed edges to the whole edge set.

    Tier 1: an unobserved single-cell edge takes the mean factor of the
    observed single-cell edges in its cell. Tier 2: an unobserved multi-cell
    edge takes the mean over observed single-cell edges of all its cells.
    Tier 3: anything left takes the global mean of the optimized factors.
    All filled values are clamped into each edge's own box.
    """
    factors: dict[int, float] = {}
    provenance: dict[int, str] = {}
    if not partial:
        log.warning("fallback_fill: no optimized edges; emitting all-ones layer")
        return (
            {eid: 1.0 for eid in net.edges},
            {eid: "global_mean" for eid in net.edges},
        )

    # per-cell means over observed single-cell edges
    cell_sum: dict[int, float] = {}
    cell_cnt: dict[int, int] = {}
    for eid, x in partial.items():
        cell = zones.single_zone.get(eid)
        if cell is not None:
            cell_sum[cell] = cell_sum.get(cell, 0.0) + x
            cell_cnt[cell] = cell_cnt.get(cell, 0) + 1
    global_mean = sum(partial.values()) / len(partial)

    for eid in net.edges:
        if eid in partial:
            factors[eid] = _clamp(net, eid, partial[eid], cfg)
            provenance[eid] = "optimized"
            continue
        if eid in zones.single_zone:
            cell = zones.single_zone[eid]
            if cell in cell_cnt:
                factors[eid] = _clamp(net, eid, cell_sum[cell] / cell_cnt[cell], cfg)
                provenance[eid] = "zone_mean"
                continue
        else:
            cells = zones.multi_zone[eid]
            cnt = sum(cell_cnt.get(z, 0) for z in cells)
            if cnt:
                pooled = sum(cell_sum.get(z, 0.0) for z in cells) / cnt
                factors[eid] = _clamp(net, eid, pooled, cfg)
                provenance[eid] = "multizone_mean"
                continue
        factors[eid] = _clamp(net, eid, global_mean, cfg)
        provenance[eid] = "global_mean"
    return factors, provenance


def solve_group(
    group: TripGroup,
    net: RoadNetwork,
    grid: GridPartition,
    zones: EdgeZoneIndex,
    cfg: CalibConfig,
    method: str,
) -> ScalingSolution:
    if method == "mfm":
        return compute_mfm(group, net, cfg)
    if method == "ssm":
        return solve_ssm(group, net, grid, zones, cfg)
    if method == "asm":
        return solve_asm(group, net, grid, zones, cfg)
    raise ValueError(f"unknown method {method!r}")


def calibrate_horizon(
    groups: list[TripGroup],
    net: RoadNetwork,
    grid: GridPartition,
    zones: EdgeZoneIndex,
    cfg: CalibConfig,
    method: str,
) -> list[ScalingSolution]:
    """One solution per period, ordered by period start.

    Empty periods copy the previous period's factors; a leading empty period
    falls back to an all-ones layer.
    """
    solutions: list[ScalingSolution] = []
    for group in sorted(groups, key=lambda g: g.period_start):
        t0 = time.perf_counter()
        if group.targets:
            try:
                sol = solve_group(group, net, grid, zones, cfg, method)
            except SolverError as exc:
                raise SolverError(f"period {group.period_start:.0f}: {exc}") from exc
        elif solutions:
            prev = solutions[-1]
            sol = ScalingSolution(
                period_start=group.period_start,
                method=method,
                factors=dict(prev.factors),
                f_mean=prev.f_mean,
                provenance=dict(prev.provenance),
                carried_forward=True,
            )
        else:
            sol = ScalingSolution(
                period_start=group.period_start,
                method=method,
                factors={eid: 1.0 for eid in net.edges},
                provenance={eid: "global_mean" for eid in net.edges},
                carried_forward=True,
            )
        sol.wall_time_s = time.perf_counter() - t0
        solutions.append(sol)
    return solutions
