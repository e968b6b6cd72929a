"""End-to-end orchestration shared by the service endpoints and the CLI."""

from __future__ import annotations

import copy
import hashlib
import json
import os
import time
from dataclasses import asdict, replace
from datetime import datetime, timezone
from pathlib import Path
from typing import Optional

from . import __version__
from .calibrate import CalibConfig, ScalingSolution, calibrate_horizon
from .evaluate import (
    DEFAULT_BIN_EDGES_S,
    build_report,
    distance_deviation,
    histogram_svg,
    report_markdown,
    trip_abs_errors,
)
from .fleet import (
    SimConfig,
    TravelTimeSource,
    generate_requests,
    run,
    write_event_log,
)
from .grid import build_grid, classify_edges
from .network import (
    RoadNetwork,
    TravelTimeLayer,
    load_network,
    read_layer_csv,
    validate_layer,
    write_layer_csv,
)
from .trips import (
    SnappedTrip,
    TripGroup,
    default_horizon,
    filter_trips,
    group_by_period,
    parse_trips,
    snap_and_route,
)


def _sha256(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def write_atomic(path: Path, text: str) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def write_manifest(
    out_dir: Path,
    command: str,
    config: dict,
    inputs: list[str],
    outputs: list[str],
    stage_times: dict[str, float],
) -> str:
    manifest = {
        "command": command,
        "tool_version": __version__,
        "created_utc": datetime.now(timezone.utc).isoformat(),
        "config": config,
        "input_digests": {p: _sha256(p) for p in inputs},
        "outputs": sorted(outputs),
        "stage_wall_times_s": stage_times,
    }
    path = out_dir / "run_manifest.json"
    write_atomic(path, json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return str(path)


def prepare_trips(
    net: RoadNetwork,
    trips_path: str,
    utc_offset_s: float = 0.0,
    max_snap_m: Optional[float] = None,
) -> tuple[list[SnappedTrip], dict]:
    """Parse, speed-filter, snap and route the trips file."""
    records, skipped = parse_trips(trips_path, utc_offset_s=utc_offset_s)
    kept = filter_trips(records)
    snapped, dropped = snap_and_route(net, kept, max_snap_m=max_snap_m)
    stats = {
        "rows_parsed": len(records),
        "rows_skipped": skipped,
        "speed_filtered": len(records) - len(kept),
        "snap_dropped": dropped,
        "trips": len(snapped),
    }
    return snapped, stats


def make_groups(
    snapped: list[SnappedTrip],
    cfg: CalibConfig,
    horizon_start: Optional[float] = None,
    horizon_end: Optional[float] = None,
) -> list[TripGroup]:
    if horizon_start is None or horizon_end is None:
        h0, h1 = default_horizon(snapped, cfg.dt_scale_s)
        horizon_start = h0 if horizon_start is None else horizon_start
        horizon_end = h1 if horizon_end is None else horizon_end
    return group_by_period(snapped, cfg.dt_scale_s, horizon_start, horizon_end)


def run_calibrate(
    nodes_path: str,
    edges_path: str,
    trips_path: str,
    out_dir: str,
    method: str,
    cfg: CalibConfig,
    utc_offset_s: float = 0.0,
    max_snap_m: Optional[float] = None,
    horizon_start: Optional[float] = None,
    horizon_end: Optional[float] = None,
) -> dict:
    """Calibrate one horizon and write one layer CSV + JSON sidecar per period."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    stage_times: dict[str, float] = {}

    t0 = time.perf_counter()
    net = load_network(nodes_path, edges_path)
    snapped, trip_stats = prepare_trips(net, trips_path, utc_offset_s, max_snap_m)
    stage_times["ingest"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    grid = build_grid(net, cfg.cell_size_m)
    zones = classify_edges(net, grid)
    groups = make_groups(snapped, cfg, horizon_start, horizon_end)
    solutions = calibrate_horizon(groups, net, grid, zones, cfg, method)
    stage_times["calibrate"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    outputs: list[str] = []
    for sol in solutions:
        layer = sol.to_layer()
        validate_layer(net, layer, cfg.min_speed_mps)
        stem = f"layer_{method}_{sol.period_start:.0f}"
        csv_path = out / f"{stem}.csv"
        write_layer_csv(str(csv_path), layer)
        sidecar_path = out / f"{stem}.json"
        write_atomic(sidecar_path, json.dumps(sol.sidecar(), indent=2, sort_keys=True) + "\n")
        outputs.extend([str(csv_path), str(sidecar_path)])
    stage_times["write"] = time.perf_counter() - t0

    manifest = write_manifest(
        out,
        "calibrate",
        {"method": method, **asdict(cfg), "utc_offset_s": utc_offset_s},
        [nodes_path, edges_path, trips_path],
        outputs,
        stage_times,
    )
    return {
        "method": method,
        "periods": [
            {
                "period_start_epoch_s": s.period_start,
                "objective_value": s.objective_value,
                "f_mean": s.f_mean,
                "n_targets": s.n_targets,
                "n_observed_edges": s.n_observed_edges,
                "carried_forward": s.carried_forward,
            }
            for s in solutions
        ],
        "trip_stats": trip_stats,
        "outputs": sorted(outputs),
        "manifest": manifest,
    }


def load_profile(profile_dir: str, method: Optional[str] = None) -> list[TravelTimeLayer]:
    """Read all layer CSVs from a calibration output directory."""
    layers = []
    pattern = f"layer_{method}_*.csv" if method else "layer_*.csv"
    for p in sorted(Path(profile_dir).glob(pattern)):
        layers.append(read_layer_csv(str(p)))
    if not layers:
        raise FileNotFoundError(f"no layer CSVs matching {pattern} in {profile_dir}")
    return sorted(layers, key=lambda l: l.period_start)


def solutions_from_layers(layers: list[TravelTimeLayer], method: str) -> list[ScalingSolution]:
    return [
        ScalingSolution(period_start=l.period_start, method=method, factors=dict(l.factors))
        for l in layers
    ]


def run_evaluate(
    nodes_path: str,
    edges_path: str,
    trips_path: str,
    profile_dirs: dict[str, str],
    out_dir: str,
    cfg: CalibConfig,
    utc_offset_s: float = 0.0,
    max_snap_m: Optional[float] = None,
    bin_edges_s: tuple[float, ...] = DEFAULT_BIN_EDGES_S,
    emit_svg: bool = True,
) -> dict:
    """Score one or more calibrated profiles against the trip data."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    stage_times: dict[str, float] = {}

    t0 = time.perf_counter()
    net = load_network(nodes_path, edges_path)
    snapped, trip_stats = prepare_trips(net, trips_path, utc_offset_s, max_snap_m)
    stage_times["ingest"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    reports = []
    raw_reports = []
    # the horizon comes from the trips; a trip period without a layer is an error
    groups = make_groups(snapped, cfg)
    for method, pdir in sorted(profile_dirs.items()):
        layers = load_profile(pdir, method)
        solutions = solutions_from_layers(layers, method)
        errors = trip_abs_errors(groups, solutions, net, raw=False)
        reports.append(build_report(method, errors, bin_edges_s))
        raw_errors = trip_abs_errors(groups, solutions, net, raw=True)
        raw_reports.append(build_report(method, raw_errors, bin_edges_s))
    deviation = distance_deviation(snapped)
    stage_times["evaluate"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    outputs: list[str] = []
    report_json = {
        "trip_stats": trip_stats,
        "distance_deviation": deviation,
        "reports": [r.to_dict() for r in reports],
        "raw_trip_reports": [r.to_dict() for r in raw_reports],
    }
    # full per-trip error lists go to disk only, not into the response
    file_json = dict(report_json)
    file_json["reports"] = [r.to_dict(include_errors=True) for r in reports]
    file_json["raw_trip_reports"] = [r.to_dict(include_errors=True) for r in raw_reports]
    json_path = out / "error_report.json"
    write_atomic(json_path, json.dumps(file_json, indent=2, sort_keys=True) + "\n")
    outputs.append(str(json_path))
    md_path = out / "error_report.md"
    write_atomic(md_path, report_markdown(reports))
    outputs.append(str(md_path))
    if emit_svg and reports:
        svg_path = out / "error_histogram.svg"
        write_atomic(svg_path, histogram_svg(reports))
        outputs.append(str(svg_path))
    stage_times["write"] = time.perf_counter() - t0

    manifest = write_manifest(
        out,
        "evaluate",
        {"profile_dirs": profile_dirs, **asdict(cfg), "utc_offset_s": utc_offset_s},
        [nodes_path, edges_path, trips_path],
        outputs,
        stage_times,
    )
    report_json["outputs"] = sorted(outputs)
    report_json["manifest"] = manifest
    return report_json


def run_simulate(
    nodes_path: str,
    edges_path: str,
    trips_path: str,
    travel_time: str,  # "freeflow" or a profile directory
    out_dir: str,
    sim_cfg: SimConfig,
    calib_cfg: CalibConfig,
    fleet_sizes: Optional[list[int]] = None,
    utc_offset_s: float = 0.0,
    max_snap_m: Optional[float] = None,
    profile_method: Optional[str] = None,
) -> dict:
    """Run the fleet simulation, optionally sweeping fleet sizes."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    stage_times: dict[str, float] = {}

    t0 = time.perf_counter()
    net = load_network(nodes_path, edges_path)
    snapped, trip_stats = prepare_trips(net, trips_path, utc_offset_s, max_snap_m)
    grid = build_grid(net, calib_cfg.cell_size_m)
    requests = generate_requests(net, snapped)
    if travel_time == "freeflow":
        tts = TravelTimeSource()
    else:
        tts = TravelTimeSource(load_profile(travel_time, profile_method))
    stage_times["ingest"] = time.perf_counter() - t0

    sizes = fleet_sizes or [sim_cfg.fleet_size]
    outputs: list[str] = []
    kpi_records = []
    t0 = time.perf_counter()
    for size in sizes:
        cfg = replace(sim_cfg, fleet_size=size)
        result = run(cfg, copy.deepcopy(requests), net, grid, tts)
        label = "freeflow" if travel_time == "freeflow" else (profile_method or "profile")
        record = {"fleet_size": size, "travel_time": label, **result.kpis()}
        kpi_records.append(record)
        log_path = out / f"events_{label}_{size}.csv"
        write_event_log(str(log_path), result.events)
        outputs.append(str(log_path))
    stage_times["simulate"] = time.perf_counter() - t0

    kpi_path = out / "kpis.json"
    write_atomic(kpi_path, json.dumps(kpi_records, indent=2, sort_keys=True) + "\n")
    outputs.append(str(kpi_path))
    manifest = write_manifest(
        out,
        "simulate",
        {
            "travel_time": travel_time,
            "fleet_sizes": sizes,
            **asdict(sim_cfg),
            "cell_size_m": calib_cfg.cell_size_m,
        },
        [nodes_path, edges_path, trips_path],
        outputs,
        stage_times,
    )
    return {
        "kpis": kpi_records,
        "trip_stats": trip_stats,
        "outputs": sorted(outputs),
        "manifest": manifest,
    }
