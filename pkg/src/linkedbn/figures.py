"""Benchmark figures rendered to files next to the delimited reports."""
from __future__ import annotations

import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

from .workload import JOIN_BUCKETS, join_bucket  # noqa: E402


def render_sorted_q(records: list[dict], path: str | Path) -> Path:
    """One ascending q-error curve per method, log-scaled."""
    path = Path(path)
    fig, ax = plt.subplots(figsize=(7, 4.5))
    for method in sorted({r["method"] for r in records}):
        qs = sorted(r["q_error"] for r in records if r["method"] == method)
        ax.plot(range(1, len(qs) + 1), qs, label=method)
    ax.set_yscale("log")
    ax.set_xlabel("queries, sorted by q-error")
    ax.set_ylabel("q-error")
    ax.set_title("Sorted q-errors by method")
    ax.legend()
    ax.grid(True, which="both", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def render_timing_buckets(records: list[dict], path: str | Path) -> Path:
    """Mean inference time per join-count bucket, one bar group per method."""
    path = Path(path)
    methods = sorted({r["method"] for r in records})
    fig, ax = plt.subplots(figsize=(7, 4.5))
    width = 0.8 / max(1, len(methods))
    for i, method in enumerate(methods):
        means = []
        for bucket in JOIN_BUCKETS:
            times = [
                r["elapsed"] * 1000.0
                for r in records
                if r["method"] == method and join_bucket(r["joins"]) == bucket
            ]
            means.append(sum(times) / len(times) if times else math.nan)
        offsets = [j + i * width for j in range(len(JOIN_BUCKETS))]
        ax.bar(offsets, means, width=width, label=method)
    ax.set_xticks([j + 0.4 - width / 2 for j in range(len(JOIN_BUCKETS))])
    ax.set_xticklabels(JOIN_BUCKETS)
    ax.set_xlabel("join count")
    ax.set_ylabel("mean inference time (ms)")
    ax.set_title("Inference time by join-count bucket")
    ax.legend()
    ax.grid(True, axis="y", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
