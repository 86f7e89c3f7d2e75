"""Throughput / latency summary shared by the pipelined and serial harnesses."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

METRIC_KEYS = (
    "mode", "frames_completed", "frames_total", "wall_time", "throughput",
    "latency_p50", "latency_p95", "latency_max", "backpressure_events",
    "pool_allocations", "pool_reuses", "pool_new_allocations", "stage_busy",
)


@dataclass
class PipelineMetrics:
    mode: str
    frames_completed: int
    frames_total: int
    wall_time: float
    throughput: float
    latency_p50: float
    latency_p95: float
    latency_max: float
    backpressure_events: int = 0
    pool_allocations: int = 0
    pool_reuses: int = 0
    pool_new_allocations: int = 0
    stage_busy: dict = field(default_factory=dict)
    latencies_ms: list = field(default_factory=list, repr=False)

    @classmethod
    def from_samples(cls, mode: str, latencies_s, window_frames: int, wall_time: float,
                     frames_total: int, **extra) -> "PipelineMetrics":
        lat = np.asarray(latencies_s, dtype=np.float64) * 1000.0
        if lat.size:
            p50, p95 = np.percentile(lat, [50, 95])
            mx = float(lat.max())
        else:
            p50 = p95 = mx = 0.0
        throughput = window_frames / wall_time if wall_time > 0 else 0.0
        return cls(mode, window_frames, frames_total, wall_time, throughput,
                   float(p50), float(p95), mx, latencies_ms=lat.tolist(), **extra)

    def to_record(self) -> str:
        """Single-line ``key=value`` record (stage busy fractions as ``busy.<stage>``)."""
        d = asdict(self)
        d.pop("latencies_ms")
        busy = d.pop("stage_busy")
        parts = []
        for k, v in d.items():
            parts.append(f"{k}={v:.6g}" if isinstance(v, float) else f"{k}={v}")
        parts.extend(f"busy.{name}={frac:.4f}" for name, frac in busy.items())
        return " ".join(parts)

    @staticmethod
    def parse_record(line: str) -> dict:
        out = {}
        for tok in line.split():
            k, _, v = tok.partition("=")
            out[k] = v
        return out

    def table(self) -> str:
        rows = [
            ("mode", self.mode),
            ("frames (measured / total)", f"{self.frames_completed} / {self.frames_total}"),
            ("wall time [s]", f"{self.wall_time:.3f}"),
            ("throughput [fps]", f"{self.throughput:.2f}"),
            ("latency p50 / p95 / max [ms]",
             f"{self.latency_p50:.1f} / {self.latency_p95:.1f} / {self.latency_max:.1f}"),
            ("backpressure events", str(self.backpressure_events)),
            ("pool allocations / reuses", f"{self.pool_allocations} / {self.pool_reuses}"),
            ("pool allocations after warmup", str(self.pool_new_allocations)),
        ]
        rows.extend((f"busy {name}", f"{frac:.1%}") for name, frac in self.stage_busy.items())
        width = max(len(r[0]) for r in rows)
        return "\n".join(f"{k.ljust(width)}  {v}" for k, v in rows)
