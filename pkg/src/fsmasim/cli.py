"""Command-line front end: ``fsmasim run|sweep|airtime|schedule|tle-info``."""

from __future__ import annotations

import argparse
import json
import math
import sys
from fractions import Fraction
from pathlib import Path

from . import geo
from .engine import run
from .errors import ConfigurationError, PropagationError, SweepError, TleParseError
from .metrics import CSV_COLUMNS
from .phy import LoRaParams, freechirp_schedule, packet_airtime
from .scenario import list_presets, load_scenario, parse_protocol_label
from .sweep import AXES, SweepSpec, emit_results, reports_csv, reports_json, run_sweep, summary_csv


def _global_flags(parser: argparse.ArgumentParser, suppress: bool) -> None:
    default = argparse.SUPPRESS if suppress else None
    parser.add_argument("--seed", type=int, default=default, help="override the scenario seed")
    parser.add_argument("--out", default=default, help="write results to this file instead of stdout")
    parser.add_argument("--format", choices=("table", "csv", "json"), default=default, help="output format (default table)")
    parser.add_argument("--trace", default=default, metavar="PATH", help="write the event trace (t_us,kind,entity,detail)")


def _parse_value(text: str):
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            pass
    lowered = text.lower()
    if lowered in ("true", "false"):
        return lowered == "true"
    return text


def _overrides(args) -> dict:
    changes = {}
    for item in args.set or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigurationError("expected key=value", item)
        changes[key.strip()] = _parse_value(value.strip())
    if getattr(args, "protocol", None):
        changes.update(parse_protocol_label(args.protocol))
    if getattr(args, "nodes", None) is not None:
        changes["nodes.count"] = args.nodes
    if args.seed is not None:
        changes["seed"] = args.seed
    return changes


def _emit(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _table(rows: list[tuple[str, object]]) -> str:
    width = max(len(k) for k, _ in rows)
    return "".join(f"{k:<{width}}  {_fmt(v)}\n" for k, v in rows)


def _fmt(value) -> str:
    if isinstance(value, float):
        return "inf" if math.isinf(value) else f"{value:.6g}"
    return str(value)


# --- subcommands ---------------------------------------------------------------------


def cmd_run(args) -> int:
    scenario = load_scenario(args.scenario)
    changes = _overrides(args)
    if changes:
        scenario = scenario.with_updates(**changes)
    if args.trace:
        with open(args.trace, "w") as sink:
            result = run(scenario, trace=sink)
    else:
        result = run(scenario, trace=True)
    report = result.report
    fmt = args.format or "table"
    if fmt == "json":
        text = reports_json([report]) + "\n"
    elif fmt == "csv":
        text = reports_csv([report])
    else:
        rows = [(c, getattr(report, c)) for c in CSV_COLUMNS]
        rows += [
            ("generated", report.generated),
            ("transmitted", report.transmitted),
            ("decoded", report.decoded),
            ("chirp_count", report.chirp_count),
            ("trace_sha256", result.trace_hash),
        ]
        text = _table(rows)
    _emit(text, args.out)
    return 0


def cmd_sweep(args) -> int:
    scenario = load_scenario(args.scenario)
    changes = _overrides(args)
    if changes:
        scenario = scenario.with_updates(**changes)
    values = tuple(_parse_value(v) for v in args.values.split(",")) if args.values else ()
    protocols = tuple(p for p in (args.protocols or "").split(",") if p)
    spec = SweepSpec(scenario, args.axis, values, protocols, args.replicates)
    reports, summary = run_sweep(spec, args.jobs)
    fmt = args.format or "csv"
    if args.out:
        emit_results(reports, "json" if fmt == "json" else "csv", args.out)
    elif fmt == "json":
        sys.stdout.write(reports_json(reports) + "\n")
    text = summary_csv(summary)
    if args.summary:
        Path(args.summary).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


def cmd_airtime(args) -> int:
    rows = []
    for pl in args.payload:
        params = LoRaParams(
            sf=args.sf, bw=args.bw, cr=args.cr, preamble_symbols=args.preamble, payload_bytes=pl,
            explicit_header=not args.implicit_header, crc_in_airtime=args.crc, ldro=not args.no_ldro,
        )
        air = packet_airtime(params)
        rows.append({"payload_bytes": pl, "symbols": _frac(air.symbols), "seconds": float(air.seconds)})
    fmt = args.format or "table"
    if fmt == "json":
        text = json.dumps(rows, indent=1) + "\n"
    elif fmt == "csv":
        text = "payload_bytes,symbols,seconds\n" + "".join(
            f"{r['payload_bytes']},{r['symbols']},{r['seconds']!r}\n" for r in rows
        )
    else:
        text = "payload_bytes  symbols   airtime_ms\n" + "".join(
            f"{r['payload_bytes']:>13}  {r['symbols']:>7}  {r['seconds'] * 1e3:>11.3f}\n" for r in rows
        )
    _emit(text, args.out)
    return 0


def _frac(value: Fraction) -> str:
    # quarter-symbol values print exactly as decimals
    return f"{float(value):g}" if (value * 4).denominator == 1 else str(value)


def cmd_schedule(args) -> int:
    params = LoRaParams(sf=args.sf, bw=args.bw)
    sched = freechirp_schedule(params, args.chirp_sf, args.wait_symbols, args.busy_factor)
    us = sched.as_us()
    data = {k: us[k] for k in ("t_chirp", "t_wait", "t_interval", "t_nsense", "t_busy_backoff")}
    fmt = args.format or "table"
    if fmt == "json":
        text = json.dumps({f"{k}_us": v for k, v in data.items()} | {"t_nsense_symbols": str(sched.nsense_symbols)}, indent=1) + "\n"
    elif fmt == "csv":
        text = "name,us,ms\n" + "".join(f"{k},{v},{v / 1000:.3f}\n" for k, v in data.items())
    else:
        text = _table([(k, f"{v / 1000:.3f} ms ({v} us)") for k, v in data.items()])
        text += _table([("t_nsense_symbols", str(sched.nsense_symbols))])
    _emit(text, args.out)
    return 0


def cmd_tle_info(args) -> int:
    el = geo.read_tle(Path(args.path))
    start = geo.propagate(el, 0.0)
    data = {
        "name": el.name,
        "satnum": el.satnum,
        "epoch_utc": el.epoch.isoformat(),
        "inclination_deg": el.inclination,
        "raan_deg": el.raan,
        "eccentricity": el.eccentricity,
        "arg_perigee_deg": el.arg_perigee,
        "mean_anomaly_deg": el.mean_anomaly,
        "mean_motion_rev_day": el.mean_motion,
        "period_s": el.period_s,
        "semi_major_axis_m": el.semi_major_axis_m,
        "epoch_lat_deg": start.lat,
        "epoch_lon_deg": start.lon,
        "epoch_alt_m": start.alt,
    }
    fmt = args.format or "table"
    if fmt == "json":
        text = json.dumps(data, indent=1) + "\n"
    elif fmt == "csv":
        text = ",".join(data) + "\n" + ",".join(_fmt(v) for v in data.values()) + "\n"
    else:
        text = _table(list(data.items()))
    _emit(text, args.out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fsmasim", description="LoRa MAC simulator for FreeChirp gateway-controlled access.")
    _global_flags(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", required=True)
    common = argparse.ArgumentParser(add_help=False)
    _global_flags(common, suppress=True)

    scen_help = f"scenario YAML file or preset ({', '.join(list_presets())})"
    p = sub.add_parser("run", parents=[common], help="run one scenario")
    p.add_argument("scenario", help=scen_help)
    p.add_argument("--protocol", help="fsma, aloha, bsma, csma or csma-<range>km")
    p.add_argument("--nodes", type=int, help="override node count")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="dotted scenario override, repeatable")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", parents=[common], help="sweep node count, offered load or protocol")
    p.add_argument("scenario", help=scen_help)
    p.add_argument("--axis", choices=AXES, default="node_count")
    p.add_argument("--values", help="comma-separated axis values")
    p.add_argument("--protocols", help="comma-separated protocol labels")
    p.add_argument("--replicates", type=int, default=1)
    p.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
    p.add_argument("--summary", metavar="PATH", help="write the summary CSV here instead of stdout")
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("airtime", parents=[common], help="print packet airtime per payload size")
    p.add_argument("--sf", type=int, default=10)
    p.add_argument("--bw", type=int, default=125_000)
    p.add_argument("--cr", type=int, default=4)
    p.add_argument("--preamble", type=int, default=8)
    p.add_argument("--payload", type=int, nargs="+", default=[0, 20, 192])
    p.add_argument("--crc", action="store_true", help="include the CRC term")
    p.add_argument("--implicit-header", action="store_true")
    p.add_argument("--no-ldro", action="store_true")
    p.set_defaults(func=cmd_airtime)

    p = sub.add_parser("schedule", parents=[common], help="print the FreeChirp timing schedule")
    p.add_argument("--sf", type=int, default=10, help="node spreading factor")
    p.add_argument("--chirp-sf", type=int, default=9)
    p.add_argument("--bw", type=int, default=125_000)
    p.add_argument("--wait-symbols", type=int, default=6)
    p.add_argument("--busy-factor", type=int, default=4)
    p.set_defaults(func=cmd_schedule)

    p = sub.add_parser("tle-info", parents=[common], help="parse and summarize a TLE file")
    p.add_argument("path")
    p.set_defaults(func=cmd_tle_info)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    for flag in ("seed", "out", "format", "trace"):
        if not hasattr(args, flag):
            setattr(args, flag, None)
    try:
        return args.func(args)
    except (ConfigurationError, TleParseError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (PropagationError, SweepError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
