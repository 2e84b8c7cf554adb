"""Parameter sweeps over node count, offered load or protocol, plus result emission."""

from __future__ import annotations

import csv
import io
import json
import math
import statistics
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from .engine import run
from .errors import ConfigurationError, SweepError
from .metrics import CSV_COLUMNS, MetricsReport
from .scenario import Scenario, parse_protocol_label

AXES = ("node_count", "offered_load", "protocol")
SUMMARY_METRICS = CSV_COLUMNS[4:]

# two-sided 95% Student t quantiles for 1..30 degrees of freedom
_T95 = (
    12.706, 4.303, 3.182, 2.776, 2.571, 2.447, 2.365, 2.306, 2.262, 2.228,
    2.201, 2.179, 2.160, 2.145, 2.131, 2.120, 2.110, 2.101, 2.093, 2.086,
    2.080, 2.074, 2.069, 2.064, 2.060, 2.056, 2.052, 2.048, 2.045, 2.042,
)


@dataclass(frozen=True)
class SweepSpec:
    base: Scenario
    axis: str
    values: tuple
    protocols: tuple[str, ...] = ()
    replicates: int = 1

    def __post_init__(self):
        if self.axis not in AXES:
            raise ConfigurationError(f"must be one of {', '.join(AXES)}", "axis")
        if len(self.values) < 1:
            raise ConfigurationError("need at least one point", "values")
        if self.replicates < 1:
            raise ConfigurationError("need at least one replicate", "replicates")
        for label in self.protocols:
            parse_protocol_label(label)

    def points(self) -> list[dict]:
        """Override dicts, one per (protocol, axis value)."""
        labels = self.protocols or (self.base.label,)
        if self.axis == "protocol":
            labels = tuple(self.values)
        out = []
        for label in labels:
            values = (None,) if self.axis == "protocol" else self.values
            for value in values:
                point = dict(parse_protocol_label(label))
                if self.axis == "node_count":
                    point["nodes.count"] = int(value)
                elif self.axis == "offered_load":
                    # offered load = nodes x duty cycle, so scale the per-node duty
                    n = self.base.nodes.count
                    if n < 1:
                        raise ConfigurationError("offered-load sweeps need nodes", "nodes.count")
                    point["traffic.duty_cycle"] = float(value) / n
                out.append(point)
        return out

    def runs(self) -> list[tuple[dict, int]]:
        return [(p, self.base.seed + r) for p in self.points() for r in range(self.replicates)]


def _run_one(base: Scenario, point: dict, seed: int) -> MetricsReport:
    try:
        scenario = base.with_updates(seed=seed, **point)
        return run(scenario).report
    except Exception as exc:
        raise SweepError(f"{type(exc).__name__}: {exc}", {**point, "seed": seed}) from exc


def run_sweep(spec: SweepSpec, parallelism: int = 1) -> tuple[list[MetricsReport], list[dict]]:
    """Run every (point, replicate); results do not depend on ``parallelism``."""
    jobs = spec.runs()
    if parallelism <= 1 or len(jobs) == 1:
        reports = [_run_one(spec.base, p, s) for p, s in jobs]
    else:
        with ProcessPoolExecutor(max_workers=parallelism) as pool:
            futures = [pool.submit(_run_one, spec.base, p, s) for p, s in jobs]
            reports = [f.result() for f in futures]
    return reports, summarize(reports, spec.axis, [_axis_value(spec, p) for p, _ in jobs])


def _axis_value(spec: SweepSpec, point: dict):
    if spec.axis == "node_count":
        return point["nodes.count"]
    if spec.axis == "offered_load":
        return round(point["traffic.duty_cycle"] * spec.base.nodes.count, 9)
    return spec.base.with_updates(**point).label if point.get("protocol") == "csma" else point["protocol"]


def mean_ci95(values: Sequence[float]) -> tuple[float, float]:
    """Sample mean and half-width of the 95% t interval (0 for a single value)."""
    n = len(values)
    if n == 0:
        return math.nan, math.nan
    mean = math.fsum(values) / n
    if n == 1 or any(math.isinf(v) for v in values):
        return mean, 0.0 if n == 1 else math.nan
    t = _T95[n - 2] if n - 1 <= len(_T95) else 1.960
    return mean, t * statistics.stdev(values) / math.sqrt(n)


def summarize(reports: Sequence[MetricsReport], axis: str = "node_count", values: Sequence | None = None) -> list[dict]:
    """Mean and 95% interval per (protocol, point); ``values`` labels each report's point."""
    if values is None:
        values = [getattr(r, axis) if axis != "protocol" else r.protocol for r in reports]
    groups: dict[tuple, list[MetricsReport]] = {}
    for r, v in zip(reports, values):
        groups.setdefault((r.protocol, v), []).append(r)
    rows = []
    for (protocol, value), members in groups.items():
        row = {"protocol": protocol, axis: value, "replicates": len(members)}
        for metric in SUMMARY_METRICS:
            mean, half = mean_ci95([float(getattr(m, metric)) for m in members])
            row[f"{metric}_mean"] = mean
            row[f"{metric}_ci95"] = half
        rows.append(row)
    return rows


def _sorted(reports: Sequence[MetricsReport]) -> list[MetricsReport]:
    return sorted(reports, key=lambda r: (r.protocol, r.node_count, r.seed))


def reports_csv(reports: Sequence[MetricsReport]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for r in _sorted(reports):
        writer.writerow([_cell(getattr(r, c)) for c in CSV_COLUMNS])
    return buf.getvalue()


def summary_csv(rows: Sequence[dict]) -> str:
    if not rows:
        return ""
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: _cell(v) for k, v in row.items()})
    return buf.getvalue()


def _cell(value):
    return repr(value) if isinstance(value, float) else value


def reports_json(reports: Sequence[MetricsReport]) -> str:
    return json.dumps([r.to_dict() for r in _sorted(reports)], indent=1, sort_keys=True)


def parse_reports_json(text: str) -> list[MetricsReport]:
    return [MetricsReport.from_dict(d) for d in json.loads(text)]


def emit_results(reports: Sequence[MetricsReport], fmt: str, out_path: str | Path) -> Path:
    """Write reports as CSV (one row per run) or JSON (full nested reports)."""
    if fmt == "csv":
        text = reports_csv(reports)
    elif fmt == "json":
        text = reports_json(reports)
    else:
        raise ConfigurationError("must be csv or json", "format")
    path = Path(out_path)
    path.write_text(text)
    return path
