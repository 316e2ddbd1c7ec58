"""CSV rows, JSON Lines traces and the human-readable summary."""

from __future__ import annotations

import csv
import io
import json
from typing import Iterable, Sequence, TextIO

from .metrics import PHASES, SHARE_GROUPS, RequestRecord, RunReport

CSV_COLUMNS = (
    "scenario_hash", "seed", "param", "value", "throughput_rps", "lat_mean_us", "lat_p50_us",
    "lat_p99_us", "share_prep", "share_queue", "share_transfer", "share_inference",
    "share_broker", "share_reload", "energy_cpu_j", "energy_gpu_j", "completions",
)


def csv_row(report: RunReport, scenario_hash: str, param: str = "", value="") -> dict:
    row = {
        "scenario_hash": scenario_hash,
        "seed": report.seed,
        "param": param,
        "value": value if isinstance(value, str) else json.dumps(value),
        "throughput_rps": f"{report.throughput:.4f}",
        "lat_mean_us": f"{report.latency_mean:.2f}",
        "lat_p50_us": report.latency_p50,
        "lat_p99_us": report.latency_p99,
        "energy_cpu_j": f"{report.energy_cpu_j:.6f}",
        "energy_gpu_j": f"{report.energy_gpu_j:.6f}",
        "completions": report.completions,
    }
    for group in SHARE_GROUPS:
        row[f"share_{group}"] = f"{report.share(group):.6f}"
    return row


def write_csv(rows: Iterable[dict], out: TextIO) -> None:
    writer = csv.DictWriter(out, fieldnames=CSV_COLUMNS, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow(row)


def csv_text(rows: Iterable[dict]) -> str:
    buf = io.StringIO()
    write_csv(rows, buf)
    return buf.getvalue()


def read_csv(text: str) -> list[dict]:
    return list(csv.DictReader(io.StringIO(text)))


def write_trace(records: Iterable[RequestRecord], out: TextIO) -> None:
    for rec in records:
        line = {
            "id": rec.id,
            "class": rec.image,
            "issued_us": rec.issued,
            "completed_us": rec.completed,
            "phases": [[PHASES[i], s, e] for i, s, e in rec.phases],
        }
        out.write(json.dumps(line, separators=(",", ":")) + "\n")


def summary_table(report: RunReport, title: str = "") -> str:
    lines = []
    if title:
        lines.append(title)
    lines.append(f"  throughput        {report.throughput:12.2f} req/s")
    lines.append(f"  latency mean      {report.latency_mean / 1000:12.3f} ms")
    lines.append(f"  latency p50       {report.latency_p50 / 1000:12.3f} ms")
    lines.append(f"  latency p99       {report.latency_p99 / 1000:12.3f} ms")
    lines.append(f"  completions       {report.completions:12d}  (warm-up {report.warm_up_discarded})")
    lines.append("  phase shares")
    for group in SHARE_GROUPS:
        lines.append(f"    {group:<15} {100 * report.share(group):10.1f} %")
    lines.append("  energy per request")
    lines.append(f"    cpu             {report.energy_cpu_j:10.4f} J")
    lines.append(f"    gpu             {report.energy_gpu_j:10.4f} J")
    for note in report.notes:
        lines.append(f"  note: {note}")
    return "\n".join(lines)


def phase_table(reports: Sequence[RunReport], labels: Sequence[str]) -> str:
    header = "phase".ljust(16) + "".join(str(l).rjust(14) for l in labels)
    lines = [header]
    for p in PHASES:
        vals = [getattr(r.breakdown, p) for r in reports]
        if any(vals):
            lines.append(p.ljust(16) + "".join(f"{v / 1000:14.3f}" for v in vals))
    return "\n".join(lines)
