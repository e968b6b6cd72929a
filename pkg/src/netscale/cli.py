"""Command line entry point: a thin client for the HTTP service.

Each subcommand builds a request payload and posts it to the service. By
default the service app runs in-process; with ``--server`` the same payload
goes to a remote instance. Flag values take precedence over the config file,
which takes precedence over built-in defaults.
"""

from __future__ import annotations

import json
import sys
from typing import Optional

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

import click


def _post(server: Optional[str], endpoint: str, payload: dict) -> dict:
    if server:
        import httpx

        resp = httpx.post(f"{server.rstrip('/')}{endpoint}", json=payload, timeout=None)
    else:
        from fastapi.testclient import TestClient

        from .service import app

        with TestClient(app, raise_server_exceptions=False) as client:
            resp = client.post(endpoint, json=payload)
    if resp.status_code != 200:
        try:
            detail = resp.json().get("detail", resp.text)
        except ValueError:
            detail = resp.text
        click.echo(f"error ({resp.status_code}): {detail}", err=True)
        sys.exit(1)
    return resp.json()


def _payload(ctx: click.Context, config_path: Optional[str], skip: tuple[str, ...]) -> dict:
    """Merge config-file values under explicitly passed CLI flags."""
    from click.core import ParameterSource

    file_values: dict = {}
    if config_path:
        with open(config_path, "rb") as f:
            file_values = tomllib.load(f)
    payload = {}
    for name, value in ctx.params.items():
        if name in skip:
            continue
        source = ctx.get_parameter_source(name)
        if source == ParameterSource.DEFAULT and name in file_values:
            payload[name] = file_values[name]
        elif value is not None:
            payload[name] = value
    for name, value in file_values.items():
        payload.setdefault(name, value)
    return payload


def common_options(fn):
    fn = click.option("--server", default=None, help="Remote service URL; default runs in-process.")(fn)
    fn = click.option("--config", "config_path", default=None, type=click.Path(exists=True),
                      help="TOML config file with request fields.")(fn)
    fn = click.option("--nodes", "nodes_path", required=True, type=click.Path(exists=True))(fn)
    fn = click.option("--edges", "edges_path", required=True, type=click.Path(exists=True))(fn)
    fn = click.option("--trips", "trips_path", required=True, type=click.Path(exists=True))(fn)
    fn = click.option("--out", "out_dir", required=True, type=click.Path())(fn)
    fn = click.option("--utc-offset", "utc_offset_s", default=0.0, show_default=True,
                      help="Trip timestamp offset, local minus UTC, seconds.")(fn)
    fn = click.option("--max-snap-m", "max_snap_m", default=None, type=float,
                      help="Drop trips snapping farther than this from a node.")(fn)
    return fn


@click.group()
@click.version_option()
def main() -> None:
    """Travel-time calibration and fleet simulation toolkit."""


@main.command()
@common_options
@click.option("--method", type=click.Choice(["mfm", "ssm", "asm"]), required=True)
@click.option("--dt-scale", "dt_scale_s", default=1800.0, show_default=True)
@click.option("--cell-m", "cell_size_m", default=1000.0, show_default=True)
@click.option("--smin-mps", "min_speed_mps", default=0.5, show_default=True)
@click.option("--solver-tol", "solver_tol", default=1e-8, show_default=True)
@click.option("--horizon-start", "horizon_start", default=None, type=float)
@click.option("--horizon-end", "horizon_end", default=None, type=float)
@click.pass_context
def calibrate(ctx: click.Context, server: Optional[str], config_path: Optional[str], **_: object) -> None:
    """Compute per-period edge scaling factors from trip records."""
    out = _post(server, "/calibrate", _payload(ctx, config_path, ("server", "config_path")))
    click.echo(json.dumps(out, indent=2))


@main.command()
@common_options
@click.option("--profile", "profiles", multiple=True, required=True,
              help="method=dir pair, e.g. asm=out/asm; repeatable.")
@click.option("--dt-scale", "dt_scale_s", default=1800.0, show_default=True)
@click.option("--cell-m", "cell_size_m", default=1000.0, show_default=True)
@click.option("--no-svg", "emit_svg", flag_value=False, default=True)
@click.pass_context
def evaluate(ctx: click.Context, server: Optional[str], config_path: Optional[str],
             profiles: tuple[str, ...], **_: object) -> None:
    """Score calibrated profiles: percentile table, histogram, deviations."""
    profile_dirs = {}
    for spec in profiles:
        if "=" not in spec:
            raise click.UsageError(f"--profile expects method=dir, got {spec!r}")
        method, pdir = spec.split("=", 1)
        profile_dirs[method] = pdir
    payload = _payload(ctx, config_path, ("server", "config_path", "profiles"))
    payload["profile_dirs"] = profile_dirs
    out = _post(server, "/evaluate", payload)
    click.echo(json.dumps(out, indent=2))


@main.command()
@common_options
@click.option("--tt", "travel_time", default="freeflow", show_default=True,
              help='"freeflow" or a calibrate output directory.')
@click.option("--profile-method", default=None, help="Layer method filter inside --tt dir.")
@click.option("--fleet-size", "fleet_size", default=100, show_default=True)
@click.option("--fleet-sizes", default=None,
              help="Comma-separated sweep, e.g. 1500,3000,4500.")
@click.option("--dt-batch", "dt_batch_s", default=30.0, show_default=True)
@click.option("--dt-max-wait", "dt_max_wait_s", default=360.0, show_default=True)
@click.option("--dt-reposition", "dt_reposition_s", default=1800.0, show_default=True)
@click.option("--base-fare", default=0.5, show_default=True)
@click.option("--fare-per-km", default=0.5, show_default=True)
@click.option("--cost-per-km", default=0.25, show_default=True)
@click.option("--fixed-cost", "fixed_cost_per_vehicle_day", default=25.0, show_default=True)
@click.option("--n-days", default=1.0, show_default=True)
@click.option("--force-serve", is_flag=True, default=False)
@click.option("--seed", default=0, show_default=True)
@click.option("--cell-m", "cell_size_m", default=1000.0, show_default=True)
@click.pass_context
def simulate(ctx: click.Context, server: Optional[str], config_path: Optional[str],
             fleet_sizes: Optional[str], **_: object) -> None:
    """Run the batched fleet simulation and emit KPIs and an event log."""
    payload = _payload(ctx, config_path, ("server", "config_path", "fleet_sizes"))
    if fleet_sizes:
        payload["fleet_sizes"] = [int(s) for s in fleet_sizes.split(",") if s]
    out = _post(server, "/simulate", payload)
    click.echo(json.dumps(out, indent=2))


@main.command()
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8000, show_default=True)
def serve(host: str, port: int) -> None:
    """Run the HTTP service."""
    import uvicorn

    uvicorn.run("netscale.service:app", host=host, port=port)


if __name__ == "__main__":
    main()
