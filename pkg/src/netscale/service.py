"""FastAPI service exposing the calibration, evaluation and simulation jobs.

The service is collocated with the data: requests carry file paths on the
service host, responses carry summaries plus the paths of the written
artifacts. Run it with ``uvicorn netscale.service:app``.
"""

from __future__ import annotations

from typing import Optional

from fastapi import FastAPI, HTTPException
from pydantic import BaseModel, Field

from . import __version__
from .calibrate import METHODS, CalibConfig, SolverError
from .fleet import SimConfig, SimulationError
from .network import NetworkError
from .pipeline import run_calibrate, run_evaluate, run_simulate

app = FastAPI(title="netscale", version=__version__)


class CalibrateRequest(BaseModel):
    nodes_path: str
    edges_path: str
    trips_path: str
    out_dir: str
    method: str = Field(pattern="^(mfm|ssm|asm)$")
    dt_scale_s: float = 1800.0
    cell_size_m: float = 1000.0
    min_speed_mps: float = 0.5
    solver_tol: float = 1e-8
    utc_offset_s: float = 0.0
    max_snap_m: Optional[float] = None
    horizon_start: Optional[float] = None
    horizon_end: Optional[float] = None

    def calib_config(self) -> CalibConfig:
        return CalibConfig(
            dt_scale_s=self.dt_scale_s,
            cell_size_m=self.cell_size_m,
            min_speed_mps=self.min_speed_mps,
            solver_tol=self.solver_tol,
        )


class PeriodSummary(BaseModel):
    period_start_epoch_s: float
    objective_value: Optional[float] = None
    f_mean: Optional[float] = None
    n_targets: int
    n_observed_edges: int
    carried_forward: bool


class CalibrateResponse(BaseModel):
    method: str
    periods: list[PeriodSummary]
    trip_stats: dict[str, int]
    outputs: list[str]
    manifest: str


class EvaluateRequest(BaseModel):
    nodes_path: str
    edges_path: str
    trips_path: str
    profile_dirs: dict[str, str]  # method label -> calibrate output directory
    out_dir: str
    dt_scale_s: float = 1800.0
    cell_size_m: float = 1000.0
    min_speed_mps: float = 0.5
    utc_offset_s: float = 0.0
    max_snap_m: Optional[float] = None
    emit_svg: bool = True


class EvaluateResponse(BaseModel):
    trip_stats: dict[str, int]
    distance_deviation: dict
    reports: list[dict]
    raw_trip_reports: list[dict]
    outputs: list[str]
    manifest: str


class SimulateRequest(BaseModel):
    nodes_path: str
    edges_path: str
    trips_path: str
    travel_time: str = "freeflow"  # "freeflow" or a profile directory
    profile_method: Optional[str] = None
    out_dir: str
    fleet_size: int = 100
    fleet_sizes: Optional[list[int]] = None
    dt_batch_s: float = 30.0
    dt_max_wait_s: float = 360.0
    dt_reposition_s: float = 1800.0
    base_fare: float = 0.5
    fare_per_km: float = 0.5
    cost_per_km: float = 0.25
    fixed_cost_per_vehicle_day: float = 25.0
    n_days: float = 1.0
    force_serve: bool = False
    seed: int = 0
    cell_size_m: float = 1000.0
    utc_offset_s: float = 0.0
    max_snap_m: Optional[float] = None

    def sim_config(self) -> SimConfig:
        return SimConfig(
            fleet_size=self.fleet_size,
            dt_batch_s=self.dt_batch_s,
            dt_max_wait_s=self.dt_max_wait_s,
            dt_reposition_s=self.dt_reposition_s,
            base_fare=self.base_fare,
            fare_per_km=self.fare_per_km,
            cost_per_km=self.cost_per_km,
            fixed_cost_per_vehicle_day=self.fixed_cost_per_vehicle_day,
            n_days=self.n_days,
            force_serve=self.force_serve,
            seed=self.seed,
        )


class SimulateResponse(BaseModel):
    kpis: list[dict]
    trip_stats: dict[str, int]
    outputs: list[str]
    manifest: str


@app.get("/health")
def health() -> dict:
    return {"status": "ok", "version": __version__}


def _run(fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except FileNotFoundError as exc:
        raise HTTPException(status_code=404, detail=str(exc)) from exc
    except (NetworkError, SolverError, SimulationError, ValueError, KeyError) as exc:
        raise HTTPException(status_code=422, detail=str(exc)) from exc


@app.post("/calibrate", response_model=CalibrateResponse)
def calibrate(req: CalibrateRequest) -> CalibrateResponse:
    if req.method not in METHODS:
        raise HTTPException(status_code=422, detail=f"unknown method {req.method!r}")
    out = _run(
        run_calibrate,
        req.nodes_path,
        req.edges_path,
        req.trips_path,
        req.out_dir,
        req.method,
        req.calib_config(),
        utc_offset_s=req.utc_offset_s,
        max_snap_m=req.max_snap_m,
        horizon_start=req.horizon_start,
        horizon_end=req.horizon_end,
    )
    return CalibrateResponse(**out)


@app.post("/evaluate", response_model=EvaluateResponse)
def evaluate(req: EvaluateRequest) -> EvaluateResponse:
    cfg = CalibConfig(
        dt_scale_s=req.dt_scale_s,
        cell_size_m=req.cell_size_m,
        min_speed_mps=req.min_speed_mps,
    )
    out = _run(
        run_evaluate,
        req.nodes_path,
        req.edges_path,
        req.trips_path,
        req.profile_dirs,
        req.out_dir,
        cfg,
        utc_offset_s=req.utc_offset_s,
        max_snap_m=req.max_snap_m,
        emit_svg=req.emit_svg,
    )
    return EvaluateResponse(**out)


@app.post("/simulate", response_model=SimulateResponse)
def simulate(req: SimulateRequest) -> SimulateResponse:
    calib_cfg = CalibConfig(cell_size_m=req.cell_size_m)
    out = _run(
        run_simulate,
        req.nodes_path,
        req.edges_path,
        req.trips_path,
        req.travel_time,
        req.out_dir,
        req.sim_config(),
        calib_cfg,
        fleet_sizes=req.fleet_sizes,
        utc_offset_s=req.utc_offset_s,
        max_snap_m=req.max_snap_m,
        profile_method=req.profile_method,
    )
    return SimulateResponse(**out)
