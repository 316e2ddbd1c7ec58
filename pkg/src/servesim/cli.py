"""Command line entry point: servesim run | sweep | analyze | calibrate."""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from importlib import resources
from pathlib import Path
from typing import Any, Optional, Sequence

from .analyzer import compute_bounds, validate_sim
from .calibrate import TARGET_SETS, CalibrationError, Fragment, calibrate
from .config import (
    ScenarioConfig, ScenarioError, apply_overrides, is_scalar_path, load_scenario,
    parse_override, scenario_from_dict, scenario_hash,
)
from .metrics import RunReport
from .multidnn import run_two_stage
from .pipeline import PipelineSim
from .report import csv_row, csv_text, summary_table, write_trace


def builtin_scenarios() -> list[str]:
    root = resources.files("servesim").joinpath("scenarios")
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".json"))


def resolve_scenario(ref: str) -> ScenarioConfig:
    """A file path, or the name of a scenario shipped with the package."""
    path = Path(ref)
    if path.exists():
        return load_scenario(path)
    if ref in builtin_scenarios():
        text = resources.files("servesim").joinpath("scenarios", f"{ref}.json").read_text()
        return scenario_from_dict(json.loads(text))
    raise ScenarioError("", f"scenario {ref!r} is neither a file nor a built-in "
                            f"({', '.join(builtin_scenarios())})")


def simulate(cfg: ScenarioConfig, trace: Optional[list] = None) -> RunReport:
    if cfg.interconnect is not None:
        return run_two_stage(cfg)
    sim = PipelineSim(cfg)
    sim.trace_all = trace is not None
    report = sim.run()
    if trace is not None:
        trace.extend(sim.all_records)
        trace.extend(sim.records)
    return report


def _build_config(args) -> ScenarioConfig:
    cfg = resolve_scenario(args.scenario)
    overrides: dict[str, Any] = {}
    for frag_path in getattr(args, "fragment", None) or []:
        overrides.update(Fragment.from_json(Path(frag_path).read_text()).values)
    for item in args.override or []:
        key, value = parse_override(item)
        overrides[key] = value
    if args.seed is not None:
        overrides["seed"] = args.seed
    return apply_overrides(cfg, overrides)


def _write(path: Optional[str], text: str) -> None:
    if path is None or path == "-":
        sys.stdout.write(text)
    else:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(text)


# ---------------------------------------------------------------- commands

def cmd_run(args) -> int:
    cfg = _build_config(args)
    trace: Optional[list] = [] if args.trace else None
    report = simulate(cfg, trace)
    h = scenario_hash(cfg)
    if args.out:
        _write(args.out, csv_text([csv_row(report, h)]))
    if args.trace:
        with open(args.trace, "w") as fh:
            write_trace(trace or [], fh)
    print(summary_table(report, f"scenario {cfg.name or args.scenario} [{h}] seed {cfg.seed}"))
    print(f"  concurrency       {cfg.workload.concurrency:12d}")
    return 0


def _sweep_point(item: tuple) -> tuple:
    cfg, param, value = item
    cfg = apply_overrides(cfg, {param: value})
    return csv_row(simulate(cfg), scenario_hash(cfg), param, value)


def parse_values(text: str) -> list:
    out = []
    for raw in text.split(","):
        raw = raw.strip()
        if not raw:
            continue
        try:
            out.append(json.loads(raw))
        except json.JSONDecodeError:
            out.append(raw)
    return out


def sweep_workers(n_points: int) -> int:
    env = os.environ.get("SERVESIM_THREADS")
    limit = int(env) if env else (os.cpu_count() or 1)
    return max(1, min(limit, n_points))


def cmd_sweep(args) -> int:
    cfg = _build_config(args)
    if not is_scalar_path(args.param):
        raise ScenarioError(args.param, "sweep parameter must address a scalar field")
    values = parse_values(args.values)
    if not values:
        raise ScenarioError(args.param, "no sweep values given")
    # validate every point up front so a bad value fails before any simulation
    for v in values:
        apply_overrides(cfg, {args.param: v})
    items = [(cfg, args.param, v) for v in values]
    workers = sweep_workers(len(items))
    if workers == 1:
        rows = [_sweep_point(it) for it in items]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_sweep_point, items))  # map keeps input order
    _write(args.out, csv_text(rows))
    if args.figure:
        from .plotting import sweep_figure
        sweep_figure(rows, args.figure, title=f"{cfg.name or args.scenario}: {args.param}")
    if args.out and args.out != "-":
        for row in rows:
            print(f"{args.param}={row['value']:>8}  {float(row['throughput_rps']):10.2f} req/s  "
                  f"p99 {int(row['lat_p99_us']) / 1000:10.3f} ms  "
                  f"queue {100 * float(row['share_queue']):5.1f} %")
    return 0


def cmd_analyze(args) -> int:
    cfg = _build_config(args)
    if cfg.interconnect is not None:
        print("analyze covers single-DNN scenarios; this one has an interconnect block",
              file=sys.stderr)
        return 2
    bounds = compute_bounds(cfg)
    print(f"scenario {cfg.name or args.scenario} [{scenario_hash(cfg)}]")
    print(f"  {'station':<14}{'demand us':>12}{'servers':>9}{'capacity/s':>13}")
    for s in bounds.stations:
        print(f"  {s.station:<14}{s.demand_us:12.1f}{s.servers:9d}{s.capacity:13.2f}")
    print(f"  X_max {bounds.x_max:.2f} req/s (bottleneck {bounds.bottleneck})")
    print(f"  R_zero {bounds.r_zero / 1000:.3f} ms")
    c = cfg.workload.concurrency
    print(f"  R_lower(C={c}) {bounds.r_lower(c) / 1000:.3f} ms"
          f"{'  [saturating]' if bounds.saturating(c) else ''}")
    sim = PipelineSim(cfg)
    report = sim.run()
    result = validate_sim(report, bounds, c, eviction=sim.evictions > 0)
    print(f"  simulated X {report.throughput:.2f} req/s, R {report.latency_mean / 1000:.3f} ms")
    for chk in result.checks:
        status = "exempt" if chk.exempt and not chk.passed else ("pass" if chk.passed else "FAIL")
        print(f"  {chk.name:<18} {chk.value:10.5f}  limit {chk.limit:<8} {status}")
    for note in result.notes:
        print(f"  note: {note}")
    print("PASS" if result.passed else "FAIL")
    return 0 if result.passed else 1


def cmd_calibrate(args) -> int:
    frag = calibrate(args.target_set)
    _write(args.out, frag.to_json())
    dest = sys.stderr if (args.out is None or args.out == "-") else sys.stdout
    for key, target in frag.targets.items():
        got = frag.achieved.get(key)
        print(f"  {key:<28} target {target:<10g} achieved {got:.5g}", file=dest)
    return 0


# ------------------------------------------------------------------ parser

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="servesim", description="Inference-server simulator")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out_help: str):
        sp.add_argument("--scenario", required=True,
                        help="scenario JSON file or built-in name")
        sp.add_argument("--override", action="append", metavar="KEY=VALUE",
                        help="dotted-path override, repeatable")
        sp.add_argument("--fragment", action="append", metavar="PATH",
                        help="calibration fragment to apply before overrides, repeatable")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out", help=out_help)

    run = sub.add_parser("run", help="simulate one scenario")
    common(run, "CSV report path ('-' for stdout)")
    run.add_argument("--trace", help="JSON Lines per-request trace path")
    run.set_defaults(func=cmd_run)

    sw = sub.add_parser("sweep", help="simulate one scenario per parameter value")
    common(sw, "CSV path, one row per value (default stdout)")
    sw.add_argument("--param", required=True, help="dotted path of a scalar field")
    sw.add_argument("--values", required=True, help="comma-separated values")
    sw.add_argument("--figure", help="also render a PNG/PDF figure of the sweep")
    sw.set_defaults(func=cmd_sweep)

    an = sub.add_parser("analyze", help="operational bounds versus simulation")
    common(an, "unused")
    an.set_defaults(func=cmd_analyze)

    ca = sub.add_parser("calibrate", help="fit a built-in target set")
    ca.add_argument("target_set", nargs="?", help=f"one of: {', '.join(sorted(TARGET_SETS))}")
    ca.add_argument("--target-set", dest="target_set_opt")
    ca.add_argument("--out", help="fragment path (default stdout)")
    ca.set_defaults(func=cmd_calibrate)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "calibrate":
        args.target_set = args.target_set_opt or args.target_set
        if not args.target_set:
            parser.error(f"calibrate needs a target set: {', '.join(sorted(TARGET_SETS))}")
    try:
        return args.func(args)
    except (ScenarioError, CalibrationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
