"""Command line entry point: serve one cluster over sockets, sweep
concurrency levels against a simulated or live target, and compare result
files across deployments.

Exit codes are a stable contract: 0 success, 2 configuration error,
3 unreachable or misbehaving target.
"""

from __future__ import annotations

import argparse
import dataclasses
import os
import sys
from typing import List, Optional, Sequence, Tuple

from .charts import emit_compare_svg, emit_svg, svg_filename
from .live import LiveTargetError, run_live_level, serve_forever
from .loadgen import LevelResult, Windows, Workload, run_sim_sweep
from .metrics import (
    CSV_HEADER,
    MetricsRecord,
    SchemaMismatch,
    SweepReport,
    parse_csv,
)
from .scenario import (
    ConfigError,
    ScenarioConfig,
    load_scenario,
    parse_users_range,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_TARGET = 3

OUT_ENV = "OFFLOAD_BENCH_OUT"

OPS = ("read", "write", "estimate", "mix")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="thzbench",
        description="channel-config control plane: serve, benchmark, compare",
    )
    sub = p.add_subparsers(dest="command", required=True)

    serve = sub.add_parser("serve", help="run one cluster over loopback sockets")
    serve.add_argument("--scenario", required=True, help="scenario JSON path")
    serve.add_argument("--bind", default=None, help="host:port override")

    bench = sub.add_parser("bench", help="closed-loop concurrency sweep")
    target = bench.add_mutually_exclusive_group(required=True)
    target.add_argument("--sim", metavar="SCENARIO",
                        help="simulate the scenario's cluster")
    target.add_argument("--url", metavar="HOST:PORT",
                        help="benchmark a running server")
    bench.add_argument("--scenario", default=None,
                       help="workload source for --url targets")
    bench.add_argument("--users", default=None, metavar="START:END:STEP",
                       help="concurrency grid override")
    bench.add_argument("--op", default=None, choices=OPS,
                       help="operation override")
    bench.add_argument("--out", default=None,
                       help=f"output directory (default ${OUT_ENV} or ./out)")
    bench.add_argument("--seed", type=int, default=None, help="seed override")

    compare = sub.add_parser("compare", help="overlay sweep CSVs")
    compare.add_argument("csvs", nargs="+", help="sweep CSV files")
    compare.add_argument("--out", default=None,
                         help="combined SVG path (default <outdir>/compare.svg)")
    return p


def _out_dir(arg: Optional[str]) -> str:
    return arg or os.environ.get(OUT_ENV) or "out"


def _apply_overrides(scenario: ScenarioConfig, args) -> ScenarioConfig:
    changes = {}
    if args.users is not None:
        changes["levels"] = tuple(parse_users_range(args.users))
    if args.op is not None:
        changes["workload"] = dataclasses.replace(scenario.workload, op=args.op)
    if args.seed is not None:
        changes["seed"] = args.seed
    if changes:
        scenario = dataclasses.replace(scenario, **changes)
    return scenario


def _summary_table(report: SweepReport) -> str:
    lines = [f"{'users':>7}  {'ok':>8}  {'err':>6}  {'mean_ms':>9}  "
             f"{'p99_ms':>9}  {'rps':>9}"]
    for r in report.records:
        lines.append(
            f"{r.users:>7}  {r.ok:>8}  {r.err:>6}  {r.mean_ms:>9.3f}  "
            f"{r.p99_ms:>9.3f}  {r.rps:>9.3f}")
    if report.knee_users is not None:
        lines.append(f"knee: {report.knee_users} users")
    else:
        lines.append("knee: not reached")
    return "\n".join(lines)


def _default_live_scenario(args) -> Tuple[Workload, Windows, tuple, int]:
    """Workload settings for --url targets with no scenario file."""
    workload = Workload(op=args.op or "read")
    windows = Windows()
    levels = tuple(parse_users_range(args.users)) if args.users else (50,)
    seed = args.seed if args.seed is not None else 0
    return workload, windows, levels, seed


def cmd_serve(args) -> int:
    scenario = load_scenario(args.scenario)
    return serve_forever(scenario, args.bind)


def _bench_sim(args) -> int:
    scenario = _apply_overrides(load_scenario(args.sim), args)
    seed = scenario.require_seed()
    out_dir = _out_dir(args.out)
    os.makedirs(out_dir, exist_ok=True)
    c = scenario.cluster
    base = os.path.join(out_dir, f"{c.mode}_{c.site}_{scenario.workload.op}")
    csv_path = base + ".csv"

    def progress(res: LevelResult) -> None:
        r = res.record
        print(f"users {r.users:>5}: ok {r.ok}, err {r.err}, "
              f"mean {r.mean_ms:.3f} ms, {r.rps:.1f} rps", flush=True)

    try:
        results = run_sim_sweep(
            c, scenario.workload, scenario.levels, scenario.windows,
            seed, scenario.params, out_path=csv_path, progress=progress,
        )
    except RuntimeError as exc:
        # levels that did run are already on disk
        print(f"sweep aborted: {exc}", file=sys.stderr)
        print(f"partial results kept in {csv_path}", file=sys.stderr)
        return EXIT_TARGET
    report = SweepReport.from_records([r.record for r in results])
    svg_path = emit_svg(report, base + ".svg")
    print(_summary_table(report))
    print(f"wrote {csv_path}")
    print(f"wrote {svg_path}")
    return EXIT_OK


def _bench_live(args) -> int:
    if args.scenario:
        scenario = _apply_overrides(load_scenario(args.scenario), args)
        workload, windows = scenario.workload, scenario.windows
        levels = scenario.levels
        seed = scenario.seed if scenario.seed is not None else 0
        params = scenario.params
    else:
        workload, windows, levels, seed = _default_live_scenario(args)
        params = None
    out_dir = _out_dir(args.out)
    os.makedirs(out_dir, exist_ok=True)
    base = os.path.join(out_dir, f"live_loopback_{workload.op}")
    csv_path = base + ".csv"

    records: List[MetricsRecord] = []
    with open(csv_path, "w", encoding="utf-8") as sink:
        sink.write(CSV_HEADER + "\n")
        sink.flush()
        for n in sorted(levels):
            try:
                result = run_live_level(args.url, workload, n, windows, seed, params)
            except LiveTargetError as exc:
                print(f"target error at {n} users: {exc}", file=sys.stderr)
                print(f"partial results kept in {csv_path}", file=sys.stderr)
                return EXIT_TARGET
            r = result.record
            records.append(r)
            sink.write(r.to_csv_row() + "\n")
            sink.flush()
            print(f"users {r.users:>5}: ok {r.ok}, err {r.err}, "
                  f"mean {r.mean_ms:.3f} ms, {r.rps:.1f} rps, "
                  f"conn_errors {result.conn_errors}", flush=True)
    report = SweepReport.from_records(records)
    svg_path = emit_svg(report, base + ".svg")
    print(_summary_table(report))
    print(f"wrote {csv_path}")
    print(f"wrote {svg_path}")
    return EXIT_OK


def cmd_bench(args) -> int:
    if args.sim:
        return _bench_sim(args)
    return _bench_live(args)


def cmd_compare(args) -> int:
    entries: List[Tuple[str, SweepReport]] = []
    for path in args.csvs:
        if not os.path.exists(path):
            raise ConfigError(f"config file does not exist: {path}")
        with open(path, "r", encoding="utf-8") as fh:
            rows = parse_csv(fh.read())
        if not rows:
            raise ConfigError(f"{path} holds no data rows")
        groups: dict[tuple, List[MetricsRecord]] = {}
        for row in rows:
            groups.setdefault((row.mode, row.site, row.op), []).append(row)
        for (mode, site, op), group in sorted(groups.items()):
            entries.append((f"{mode}/{site}/{op}", SweepReport.from_records(group)))

    out_dir = _out_dir(None)
    out_path = args.out or os.path.join(out_dir, "compare.svg")
    emit_compare_svg(entries, out_path)

    width = max(len(label) for label, _ in entries)
    print(f"{'deployment':<{width}}  knee_users")
    for label, report in entries:
        knee = report.knee_users if report.knee_users is not None else "-"
        print(f"{label:<{width}}  {knee}")
    print(f"wrote {out_path}")
    return EXIT_OK


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    handlers = {"serve": cmd_serve, "bench": cmd_bench, "compare": cmd_compare}
    try:
        return handlers[args.command](args)
    except (ConfigError, SchemaMismatch) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except LiveTargetError as exc:
        print(f"target error: {exc}", file=sys.stderr)
        return EXIT_TARGET


if __name__ == "__main__":
    sys.exit(main())
