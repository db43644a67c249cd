"""Command-line entry point.

Exit codes: 0 ok, 2 configuration error, 3 I/O error, 4 internal invariant breach.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from . import __version__
from .engine import SimConfig, lag_experiment, load_config, run
from .errors import ConfigError, InvariantError, MapValidationError, NoRouteError
from .manager import ManagerMode
from .roadgraph import a_star, build_default_map, is_strongly_connected, load_map, save_map

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_INVARIANT = 0, 2, 3, 4


class CliIOError(Exception):
    pass


def _read_scenario(path, seed=None, mode=None) -> SimConfig:
    doc = {}
    if path is not None:
        try:
            with open(path) as fh:
                text = fh.read()
        except OSError as exc:
            raise CliIOError(f"cannot read scenario {path}: {exc.strerror}") from None
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: malformed JSON at line {exc.lineno}: {exc.msg}") from None
    return load_config(doc, seed=seed, mode=mode)


def _write_json(out_dir, name, payload) -> None:
    if out_dir is None:
        return
    try:
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, name), "w") as fh:
            fh.write(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    except OSError as exc:
        raise CliIOError(f"cannot write {name} to {out_dir}: {exc.strerror}") from None


def cmd_run(args) -> int:
    cfg = _read_scenario(args.scenario, args.seed, args.mode)
    result = run(cfg, record_trace=True)
    try:
        result.write(args.out)
    except OSError as exc:
        raise CliIOError(f"cannot write outputs to {args.out}: {exc.strerror}") from None
    if not args.quiet:
        m = result.metrics
        print(f"mode: {cfg.mode.value}")
        print(f"completed_routes: {m.completed_routes}")
        print(f"throughput: {m.throughput:.3f} routes/min")
        print(f"min_separation: {m.min_separation:.3f} m")
        print(f"separation_violations: {m.separation_violations}")
        print(f"deadlock_events: {m.deadlock_events}")
        print(f"outputs: {os.path.join(args.out, '')}{{trace.csv,events.jsonl,metrics.json}}")
    return EXIT_OK


def cmd_validate_map(args) -> int:
    try:
        graph = load_map(args.map)
    except MapValidationError as exc:
        print(f"invalid map: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    connected = is_strongly_connected(graph)
    print(f"nodes: {len(graph.nodes)}")
    print(f"edges: {len(graph.edges)}")
    print(f"strongly_connected: {str(connected).lower()}")
    if not connected:
        print("invalid map: graph is not strongly connected", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


COMPARE_ROWS = ("throughput", "mean_travel_time", "completed_routes", "deadlock_events",
                "min_separation", "separation_violations")


def _summary(m) -> dict:
    d = m.to_dict()
    tt = m.travel_times
    d["mean_travel_time"] = round(sum(tt) / len(tt), 9) if tt else None
    return {k: d[k] for k in COMPARE_ROWS}


def cmd_compare(args) -> int:
    cfg = _read_scenario(args.scenario, args.seed)
    report = {}
    for mode in (ManagerMode.OPTIMIZED, ManagerMode.FIFO):
        res = run(cfg.model_copy(update={"mode": mode}))
        report[mode.value] = _summary(res.metrics)
    _write_json(args.out, "compare.json", report)
    if not args.quiet:
        print(f"{'metric':<24}{'optimized':>14}{'fifo_baseline':>16}")
        for key in COMPARE_ROWS:
            a, b = report["optimized"][key], report["fifo_baseline"][key]
            print(f"{key:<24}{_fmt(a):>14}{_fmt(b):>16}")
        if args.json:
            print(json.dumps(report, indent=2, sort_keys=True))
    return EXIT_OK


def _fmt(v) -> str:
    if v is None:
        return "-"
    if isinstance(v, float):
        return f"{v:.3f}"
    return str(v)


def cmd_lag(args) -> int:
    lats = args.latency or [0.0, 0.05, 0.2]
    bad = [x for x in lats if x < 0]
    if bad:
        raise ConfigError(f"latency must be >= 0, got {bad[0]}")
    cfg = _read_scenario(args.scenario, args.seed)
    rows = lag_experiment(cfg, lats)
    _write_json(args.out, "lag.json", rows)
    if not args.quiet:
        print(f"{'latency_s':>10}{'response_delay_s':>18}{'min_separation_m':>18}")
        for r in rows:
            print(f"{r['latency']:>10.3f}{r['mean_response_delay']:>18.4f}{r['min_separation']:>18.3f}")
        if args.json:
            print(json.dumps(rows, indent=2, sort_keys=True))
    return EXIT_OK


def cmd_export_map(args) -> int:
    graph = build_default_map(args.spacing)
    try:
        save_map(graph, args.out, waypoints=not args.no_waypoints)
    except OSError as exc:
        raise CliIOError(f"cannot write {args.out}: {exc.strerror}") from None
    if not args.quiet:
        print(f"wrote {args.out}: {len(graph.nodes)} nodes, {len(graph.edges)} edges")
    return EXIT_OK


def cmd_route(args) -> int:
    graph = load_map(args.map) if args.map else build_default_map()
    for n in (args.start, args.goal):
        if n not in graph.nodes:
            raise ConfigError(f"unknown node {n!r}")
    try:
        path = a_star(graph, args.start, args.goal)
    except NoRouteError as exc:
        print(f"no route: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    print(f"length: {path.total_length:.3f} m")
    print(f"edges: {' '.join(path.edges)}")
    print(f"nodes: {' '.join(n for n, _ in path.node_sequence)}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fleettwin", description="Centralized traffic manager simulator.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out_required=False):
        sp.add_argument("--scenario", help="scenario JSON file (defaults used when omitted)")
        sp.add_argument("--out", required=out_required, help="output directory")
        sp.add_argument("--seed", type=int, help="override the scenario seed")
        sp.add_argument("--quiet", action="store_true", help="suppress the text report")

    sp = sub.add_parser("run", help="run one scenario and write trace, events and metrics")
    common(sp, out_required=True)
    sp.add_argument("--mode", choices=[m.value for m in ManagerMode], help="override the manager mode")
    sp.set_defaults(func=cmd_run)

    sp = sub.add_parser("validate-map", help="check a map file against the road-graph invariants")
    sp.add_argument("map")
    sp.set_defaults(func=cmd_validate_map)

    sp = sub.add_parser("compare", help="run optimized and FIFO modes with the same seed")
    common(sp)
    sp.add_argument("--json", action="store_true", help="also print the report as JSON")
    sp.set_defaults(func=cmd_compare)

    sp = sub.add_parser("lag", help="response delay against channel latency")
    common(sp)
    sp.add_argument("--latency", type=float, action="append", help="latency in seconds (repeatable)")
    sp.add_argument("--json", action="store_true", help="also print the table as JSON")
    sp.set_defaults(func=cmd_lag)

    sp = sub.add_parser("export-map", help="write the default map as JSON")
    sp.add_argument("--out", required=True, help="map file to write")
    sp.add_argument("--spacing", type=float, default=0.5, help="waypoint spacing in meters")
    sp.add_argument("--no-waypoints", action="store_true", help="omit per-edge waypoints")
    sp.add_argument("--quiet", action="store_true")
    sp.set_defaults(func=cmd_export_map)

    sp = sub.add_parser("route", help="plan a single A* route")
    sp.add_argument("start")
    sp.add_argument("goal")
    sp.add_argument("--map", help="map file (default map when omitted)")
    sp.set_defaults(func=cmd_route)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, MapValidationError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (CliIOError, OSError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except InvariantError as exc:
        print(f"invariant breach: {exc}", file=sys.stderr)
        return EXIT_INVARIANT


if __name__ == "__main__":
    sys.exit(main())
