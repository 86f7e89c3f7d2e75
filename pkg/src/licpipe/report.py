"""Figures for benchmark and stream runs, rendered headless to image files."""

from __future__ import annotations

from pathlib import Path
from typing import Optional, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from licpipe.pipeline.metrics import PipelineMetrics  # noqa: E402


def figure_paths(base) -> dict[str, Path]:
    """Figure files written next to ``base`` (a metrics file path)."""
    base = Path(base)
    stem = base.with_suffix("") if base.suffix else base
    return {"latency": stem.with_name(stem.name + "_latency.png"),
            "busy": stem.with_name(stem.name + "_busy.png"),
            "compare": stem.with_name(stem.name + "_throughput.png")}


def latency_histogram(runs: Sequence[PipelineMetrics], path) -> Path:
    fig, ax = plt.subplots(figsize=(6, 3.5))
    for m in runs:
        if m.latencies_ms:
            ax.hist(m.latencies_ms, bins=40, alpha=0.6,
                    label=f"{m.mode} (p50 {m.latency_p50:.1f} ms)")
    ax.set_xlabel("frame latency [ms]")
    ax.set_ylabel("frames")
    ax.legend(loc="upper right")
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return Path(path)


def stage_busy_bars(m: PipelineMetrics, path) -> Path:
    names = list(m.stage_busy)
    fig, ax = plt.subplots(figsize=(6, 3))
    ax.barh(names, [m.stage_busy[n] for n in names], color="tab:blue")
    ax.set_xlim(0, max(1.0, *m.stage_busy.values()) if names else 1.0)
    ax.set_xlabel("busy fraction per worker")
    ax.set_title(f"{m.mode}: {m.throughput:.1f} fps")
    ax.invert_yaxis()
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return Path(path)


def throughput_bars(runs: Sequence[PipelineMetrics], path) -> Path:
    fig, ax = plt.subplots(figsize=(4, 3))
    ax.bar([m.mode for m in runs], [m.throughput for m in runs],
           color=["tab:orange", "tab:blue", "tab:green"][:len(runs)])
    ax.set_ylabel("throughput [fps]")
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return Path(path)


def write_report(runs: Sequence[PipelineMetrics], base) -> list[Path]:
    """Render every figure that applies to ``runs``; returns the written paths."""
    paths = figure_paths(base)
    out = [latency_histogram(runs, paths["latency"])]
    main: Optional[PipelineMetrics] = next((m for m in runs if m.mode == "pipelined"), runs[0])
    if main.stage_busy:
        out.append(stage_busy_bars(main, paths["busy"]))
    if len(runs) > 1:
        out.append(throughput_bars(runs, paths["compare"]))
    return out
