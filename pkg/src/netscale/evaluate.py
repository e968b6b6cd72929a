"""Calibration quality reports: absolute errors, percentiles, histograms,
and the route-distance plausibility summary."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .calibrate import ScalingSolution
from .network import RoadNetwork, path_travel_time
from .trips import SnappedTrip, TripGroup

log = logging.getLogger(__name__)

PERCENTILE_RANKS = (5, 25, 50, 75, 95)
EXACT_THRESHOLD_S = 1.0  # errors under one second count as exact reproduction

# bin edges in seconds: [0-1s) [1s-1min) [1-2min) [2-5min) [5-10min) [10-80min]
DEFAULT_BIN_EDGES_S = (0.0, 1.0, 60.0, 120.0, 300.0, 600.0, 4800.0)


@dataclass
class ErrorReport:
    method: str
    abs_errors_s: list[float]
    percentiles_s: dict[int, float] = field(default_factory=dict)
    max_error_s: float = 0.0
    exact_fraction: float = 0.0
    histogram: list[float] = field(default_factory=list)
    bin_edges_s: tuple[float, ...] = DEFAULT_BIN_EDGES_S

    def to_dict(self, include_errors: bool = False) -> dict:
        return {
            "method": self.method,
            "n_trips": len(self.abs_errors_s),
            **({"abs_errors_s": list(self.abs_errors_s)} if include_errors else {}),
            "percentiles_s": self.percentiles_s,
            "percentiles_min": {k: v / 60.0 for k, v in self.percentiles_s.items()},
            "max_error_s": self.max_error_s,
            "exact_fraction": self.exact_fraction,
            "histogram": self.histogram,
            "bin_edges_s": list(self.bin_edges_s),
        }


def trip_abs_errors(
    groups: list[TripGroup],
    solutions: list[ScalingSolution],
    net: RoadNetwork,
    raw: bool = False,
) -> list[float]:
    """Absolute error between recorded and scaled-network travel times.

    With raw=False errors are per deduplicated OD target (what the solver
    saw); with raw=True each collapsed member trip contributes its own error
    against the shared scaled path time.
    """
    layer_by_period = {s.period_start: s.to_layer() for s in solutions}
    errors: list[float] = []
    for group in groups:
        if not group.targets:
            continue
        if group.period_start not in layer_by_period:
            raise KeyError(f"no scaling solution for period {group.period_start:.0f}")
        layer = layer_by_period[group.period_start]
        for tgt in group.targets:
            scaled = path_travel_time(net, list(tgt.path), layer)
            if raw:
                errors.extend(abs(d - scaled) for d in tgt.member_durations)
            else:
                errors.append(abs(tgt.duration_s - scaled))
    return errors


def percentile_table(errors: list[float]) -> tuple[dict[int, float], float]:
    """Linear-interpolation percentiles at the standard ranks, plus the max."""
    if not errors:
        raise ValueError("percentile_table: empty error list")
    arr = np.asarray(errors, dtype=float)
    pct = {r: float(np.percentile(arr, r)) for r in PERCENTILE_RANKS}
    return pct, float(arr.max())


def error_histogram(
    errors: list[float], bin_edges_s: tuple[float, ...] = DEFAULT_BIN_EDGES_S
) -> list[float]:
    """Trip fractions per bin; bins are half-open except the last (closed).

    Values beyond the final edge land in the last bin with a warning.
    """
    if any(b <= a for a, b in zip(bin_edges_s, bin_edges_s[1:])):
        raise ValueError("bin edges must be strictly increasing")
    if not errors:
        raise ValueError("error_histogram: empty error list")
    n_bins = len(bin_edges_s) - 1
    counts = [0] * n_bins
    overflow = 0
    for e in errors:
        if e > bin_edges_s[-1]:
            overflow += 1
            counts[-1] += 1
            continue
        for i in range(n_bins):
            if bin_edges_s[i] <= e < bin_edges_s[i + 1] or (
                i == n_bins - 1 and e == bin_edges_s[-1]
            ):
                counts[i] += 1
                break
    if overflow:
        log.warning("error_histogram: %d errors beyond final bin edge", overflow)
    total = len(errors)
    return [c / total for c in counts]


def build_report(
    method: str,
    errors: list[float],
    bin_edges_s: tuple[float, ...] = DEFAULT_BIN_EDGES_S,
) -> ErrorReport:
    pct, max_err = percentile_table(errors)
    return ErrorReport(
        method=method,
        abs_errors_s=errors,
        percentiles_s=pct,
        max_error_s=max_err,
        exact_fraction=sum(1 for e in errors if e < EXACT_THRESHOLD_S) / len(errors),
        histogram=error_histogram(errors, bin_edges_s),
        bin_edges_s=bin_edges_s,
    )


def distance_deviation(snapped: list[SnappedTrip]) -> dict:
    """How far route distances drift from recorded ones, plus route speeds."""
    if not snapped:
        return {
            "n_trips": 0,
            "fraction_within_250m": 0.0,
            "fraction_within_1km": 0.0,
            "route_speed_mps": {},
        }
    devs = np.array([abs(s.sd_distance_m - s.record.distance_m) for s in snapped])
    speeds = np.array([s.sd_distance_m / s.record.duration_s for s in snapped])
    return {
        "n_trips": len(snapped),
        "fraction_within_250m": float(np.mean(devs <= 250.0)),
        "fraction_within_1km": float(np.mean(devs <= 1000.0)),
        "route_speed_mps": {
            "mean": float(speeds.mean()),
            "p5": float(np.percentile(speeds, 5)),
            "p50": float(np.percentile(speeds, 50)),
            "p95": float(np.percentile(speeds, 95)),
        },
    }


def report_markdown(reports: list[ErrorReport]) -> str:
    """Percentile table in minutes, one row per method."""
    lines = [
        "| Method | 5% | 25% | 50% | 75% | 95% | Max | Exact |",
        "|--------|----|-----|-----|-----|-----|-----|-------|",
    ]
    for r in reports:
        cells = " | ".join(f"{r.percentiles_s[k] / 60:.2f}" for k in PERCENTILE_RANKS)
        lines.append(
            f"| {r.method.upper()} | {cells} | {r.max_error_s / 60:.2f} "
            f"| {r.exact_fraction:.1%} |"
        )
    return "\n".join(lines) + "\n"


def histogram_svg(reports: list[ErrorReport]) -> str:
    """Static grouped bar chart of the error histogram, one series per method."""
    width, height, pad = 640, 320, 40
    n_bins = len(reports[0].histogram)
    group_w = (width - 2 * pad) / n_bins
    bar_w = group_w / (len(reports) + 1)
    colors = ["#4c72b0", "#dd8452", "#55a868", "#c44e52"]
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
        f'<line x1="{pad}" y1="{height - pad}" x2="{width - pad}" y2="{height - pad}" stroke="black"/>',
    ]
    labels = ["<1s", "1s-1m", "1-2m", "2-5m", "5-10m", "10-80m"]
    for b in range(n_bins):
        x0 = pad + b * group_w
        for i, r in enumerate(reports):
            h = r.histogram[b] * (height - 2 * pad)
            parts.append(
                f'<rect x="{x0 + i * bar_w:.1f}" y="{height - pad - h:.1f}" '
                f'width="{bar_w:.1f}" height="{h:.1f}" fill="{colors[i % len(colors)]}"/>'
            )
        label = labels[b] if b < len(labels) else f"bin{b}"
        parts.append(
            f'<text x="{x0 + group_w / 2:.1f}" y="{height - pad + 16}" '
            f'font-size="11" text-anchor="middle">{label}</text>'
        )
    for i, r in enumerate(reports):
        parts.append(
            f'<rect x="{width - pad - 110}" y="{pad + i * 18}" width="12" height="12" '
            f'fill="{colors[i % len(colors)]}"/>'
            f'<text x="{width - pad - 92}" y="{pad + i * 18 + 10}" font-size="12">'
            f"{r.method.upper()}</text>"
        )
    parts.append("</svg>")
    return "\n".join(parts)
