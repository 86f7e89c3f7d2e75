"""Benchmark harnesses: the pipelined runner and the serial baseline.

Both feed frames from ``source`` (any iterable of payloads; a repeated
sample image models the looping-input methodology) and report
:class:`PipelineMetrics`.  The first ``warmup`` frames are excluded from
latency statistics and from the throughput window.
"""

from __future__ import annotations

import threading
import time
from typing import Any, Callable, Iterable, Optional, Sequence

from licpipe.pipeline.core import Pipeline, PipelineClosed, StageSpec, Task
from licpipe.pipeline.metrics import PipelineMetrics
from licpipe.pipeline.pool import BufferPool

DEFAULT_WARMUP = 30


def _pool_counts(pool: Optional[BufferPool]) -> tuple[int, int]:
    if pool is None:
        return 0, 0
    c = pool.counters()
    return c["pool_allocations"], c["pool_reuses"]


def run_benchmark(pipeline: Pipeline, source: Iterable[Any], frames: Optional[int] = None,
                  seconds: Optional[float] = None, warmup: int = DEFAULT_WARMUP,
                  sink: Optional[Callable[[Task], None]] = None,
                  pool: Optional[BufferPool] = None) -> PipelineMetrics:
    """Drive ``pipeline`` as fast as backpressure allows, then drain it.

    Stops after ``frames`` submissions or ``seconds`` of feeding, whichever
    comes first.  ``sink`` sees every completed task in order (and is where
    pooled output buffers should be released).  The pipeline is shut down on
    return.
    """
    if frames is None and seconds is None:
        raise ValueError("give a frame count or a duration")
    if pipeline.submitted:
        raise ValueError("benchmark needs an idle, unused pipeline")
    failure: list[BaseException] = []

    def feed():
        deadline = None if seconds is None else time.perf_counter() + seconds
        n = 0
        try:
            for payload in source:
                if frames is not None and n >= frames:
                    break
                if deadline is not None and time.perf_counter() >= deadline:
                    break
                pipeline.submit(payload)
                n += 1
        except PipelineClosed:
            pass
        except BaseException as exc:
            failure.append(exc)
        finally:
            pipeline.shutdown(drain=True)

    feeder = threading.Thread(target=feed, name="bench-feeder", daemon=True)
    t_begin = time.perf_counter()
    feeder.start()

    latencies = []
    t_window = t_begin
    last = t_begin
    count = 0
    alloc_at_warmup = None
    try:
        for task in pipeline.results():
            if task.error is not None:
                raise task.error
            if sink is not None:
                sink(task)
            count += 1
            last = task.t_complete
            latencies.append(task.latency)
            if count == warmup:
                t_window = last
                alloc_at_warmup = _pool_counts(pool)[0]
                pipeline.reset_stats()
    except BaseException:
        pipeline.shutdown(drain=False)
        raise
    feeder.join()
    if failure:
        raise failure[0]

    if count <= warmup:
        # too short to have a steady-state window; report everything
        t_window = t_begin
        measured = count
    else:
        latencies = latencies[warmup:]
        measured = count - warmup
    wall = last - t_window
    allocs, reuses = _pool_counts(pool)
    busy = {}
    for st in pipeline.stage_report():
        busy[st["name"]] = st["busy"] / (wall * st["workers"]) if wall > 0 else 0.0
    return PipelineMetrics.from_samples(
        "pipelined", latencies, measured, wall, count,
        backpressure_events=pipeline.backpressure_events(),
        pool_allocations=allocs, pool_reuses=reuses, stage_busy=busy,
        pool_new_allocations=0 if alloc_at_warmup is None else allocs - alloc_at_warmup)


def run_serial_reference(stages: Sequence[StageSpec], source: Iterable[Any], count: int,
                         warmup: int = DEFAULT_WARMUP,
                         sink: Optional[Callable[[Task], None]] = None,
                         pool: Optional[BufferPool] = None) -> PipelineMetrics:
    """Run every stage of one frame to completion before starting the next.

    This is the baseline the pipeline is measured against: one thread, no
    overlap between stages.  Outputs go to ``sink`` as :class:`Task` objects
    shaped exactly like the pipelined ones.
    """
    busy_total = {s.name: 0.0 for s in stages}
    latencies = []
    t_begin = time.perf_counter()
    t_window = t_begin
    last = t_begin
    done = 0
    alloc_at_warmup = None
    for seq, payload in enumerate(source):
        if seq >= count:
            break
        task = Task(seq, payload, len(stages), time.perf_counter())
        for i, spec in enumerate(stages):
            task.t_enter[i] = time.perf_counter()
            task.payload = spec.work(task.payload)
            task.t_exit[i] = time.perf_counter()
            busy_total[spec.name] += task.t_exit[i] - task.t_enter[i]
            task.advance(i)
        task.t_complete = time.perf_counter()
        if sink is not None:
            sink(task)
        done += 1
        last = task.t_complete
        latencies.append(task.latency)
        if done == warmup:
            t_window = last
            alloc_at_warmup = _pool_counts(pool)[0]
            busy_total = dict.fromkeys(busy_total, 0.0)

    if done <= warmup:
        t_window = t_begin
        measured = done
    else:
        latencies = latencies[warmup:]
        measured = done - warmup
    wall = last - t_window
    allocs, reuses = _pool_counts(pool)
    busy = {k: (v / wall if wall > 0 else 0.0) for k, v in busy_total.items()}
    return PipelineMetrics.from_samples("serial", latencies, measured, wall, done,
                                     pool_allocations=allocs, pool_reuses=reuses,
                                     stage_busy=busy, pool_new_allocations=(
                                         0 if alloc_at_warmup is None
                                         else allocs - alloc_at_warmup))
