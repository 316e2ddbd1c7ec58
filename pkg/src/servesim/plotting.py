"""Figures for sweep results, rendered to image files."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

SHARE_KEYS = ("prep", "queue", "transfer", "inference", "broker", "reload")


def sweep_figure(rows: Sequence[dict], path: str | Path, title: str = "") -> Path:
    """Throughput, latency and phase shares against the swept parameter."""
    path = Path(path)
    labels = [r["value"] for r in rows]
    x = range(len(rows))
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(10, 4))
    thr = [float(r["throughput_rps"]) for r in rows]
    p99 = [float(r["lat_p99_us"]) / 1000 for r in rows]
    mean = [float(r["lat_mean_us"]) / 1000 for r in rows]
    ax1.plot(x, thr, marker="o", color="tab:blue")
    ax1.set_ylabel("throughput (req/s)", color="tab:blue")
    ax1.set_xticks(list(x), labels)
    ax1.set_xlabel(rows[0]["param"] if rows else "")
    twin = ax1.twinx()
    twin.plot(x, mean, marker="s", color="tab:orange", label="mean")
    twin.plot(x, p99, marker="^", color="tab:red", label="p99")
    twin.set_ylabel("latency (ms)")
    twin.legend(loc="upper left", fontsize=8)

    bottom = [0.0] * len(rows)
    for key in SHARE_KEYS:
        vals = [100 * float(r[f"share_{key}"]) for r in rows]
        if any(vals):
            ax2.bar(list(x), vals, bottom=bottom, label=key)
            bottom = [b + v for b, v in zip(bottom, vals)]
    ax2.set_xticks(list(x), labels)
    ax2.set_ylabel("share of latency (%)")
    ax2.set_xlabel(rows[0]["param"] if rows else "")
    ax2.legend(fontsize=8)
    if title:
        fig.suptitle(title)
    fig.tight_layout()
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
