"""Stage pipeline runtime: bounded ordered queues, executors, buffer pool, benchmarks."""

from licpipe.pipeline.bench import DEFAULT_WARMUP, run_benchmark, run_serial_reference
from licpipe.pipeline.core import (
    DEFAULT_QUEUE_CAPACITY,
    Pipeline,
    PipelineClosed,
    SequencedQueue,
    StageError,
    StageSpec,
    Task,
    pooled,
    serialized,
)
from licpipe.pipeline.metrics import METRIC_KEYS, PipelineMetrics
from licpipe.pipeline.pool import BufferPool, ForeignBufferError

__all__ = [
    "DEFAULT_QUEUE_CAPACITY",
    "DEFAULT_WARMUP",
    "METRIC_KEYS",
    "BufferPool",
    "ForeignBufferError",
    "Pipeline",
    "PipelineClosed",
    "PipelineMetrics",
    "SequencedQueue",
    "StageError",
    "StageSpec",
    "Task",
    "pooled",
    "run_benchmark",
    "run_serial_reference",
    "serialized",
]
