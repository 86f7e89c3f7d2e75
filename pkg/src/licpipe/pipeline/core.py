"""Multi-stage task pipeline with bounded, sequence-ordered stage queues.

Each stage owns one input queue and either a single dedicated thread
(serialized, modelling an accelerator control thread) or ``k`` worker
threads pulling from the same queue.  Tasks carry a sequence number; every
queue releases tasks strictly in sequence order, so serialized stages and
the final collector always see frames in submission order even when a
worker pool upstream finishes them out of order.
"""

from __future__ import annotations

import threading
import time
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Iterator, Optional

DEFAULT_QUEUE_CAPACITY = 4


class PipelineClosed(RuntimeError):
    """Submission to a pipeline that has been shut down."""


class StageError(RuntimeError):
    """A stage's work function raised; carries the stage and frame sequence."""

    def __init__(self, stage: str, stage_index: int, sequence: int, cause: BaseException):
        super().__init__(f"stage {stage!r} failed on frame {sequence}: {cause}")
        self.stage = stage
        self.stage_index = stage_index
        self.sequence = sequence
        self.cause = cause


@dataclass
class StageSpec:
    """One stage: a work function plus its executor shape and queue bound."""

    name: str
    work: Callable[[Any], Any]
    workers: int = 1
    serialized: bool = True
    queue_capacity: int = DEFAULT_QUEUE_CAPACITY

    def __post_init__(self):
        if self.workers < 1:
            raise ValueError(f"stage {self.name!r}: workers must be >= 1")
        if self.serialized and self.workers != 1:
            raise ValueError(f"stage {self.name!r}: a serialized stage has exactly one executor")
        if self.queue_capacity < 1:
            raise ValueError(f"stage {self.name!r}: queue capacity must be >= 1")

    @property
    def executor(self) -> str:
        return "serialized" if self.serialized else f"pool({self.workers})"


def serialized(name: str, work: Callable[[Any], Any],
               queue_capacity: int = DEFAULT_QUEUE_CAPACITY) -> StageSpec:
    return StageSpec(name, work, 1, True, queue_capacity)


def pooled(name: str, work: Callable[[Any], Any], workers: int,
           queue_capacity: int = DEFAULT_QUEUE_CAPACITY) -> StageSpec:
    return StageSpec(name, work, workers, False, queue_capacity)


@dataclass(eq=False)
class Task:
    sequence: int
    payload: Any
    num_stages: int
    t_submit: float
    state: int = 0
    error: Optional[StageError] = None
    t_enter: list = field(default_factory=list)
    t_exit: list = field(default_factory=list)
    t_complete: Optional[float] = None

    def __post_init__(self):
        self.t_enter = [None] * self.num_stages
        self.t_exit = [None] * self.num_stages

    def advance(self, stage_index: int) -> None:
        if stage_index != self.state:
            raise RuntimeError(f"task {self.sequence} in state {self.state} "
                               f"cannot complete stage {stage_index}")
        self.state += 1

    @property
    def done(self) -> bool:
        return self.state == self.num_stages

    @property
    def latency(self) -> float:
        return self.t_complete - self.t_submit

    def result(self) -> Any:
        if self.error is not None:
            raise self.error
        return self.payload


class SequencedQueue:
    """Bounded queue that admits tasks by sequence window and yields them in order.

    ``put(seq, item)`` blocks while ``seq`` lies ``capacity`` or more ahead of
    the next sequence to be delivered; the next expected item is therefore
    always admissible, which rules out reordering deadlock.  For in-order
    producers this is exactly a FIFO of ``capacity`` slots.
    """

    def __init__(self, capacity: Optional[int]):
        self.capacity = capacity
        self._items: dict[int, Any] = {}
        self._next = 0
        self._end: Optional[int] = None
        self._cancelled = False
        self._cond = threading.Condition()
        self.backpressure_events = 0

    def _full_for(self, seq: int) -> bool:
        return self.capacity is not None and seq >= self._next + self.capacity

    def put(self, seq: int, item: Any, on_admit: Optional[Callable[[], None]] = None) -> bool:
        """Insert ``item``; returns False (item not stored) if the queue was cancelled."""
        with self._cond:
            if self._full_for(seq) and not self._cancelled:
                self.backpressure_events += 1
            while self._full_for(seq) and not self._cancelled:
                self._cond.wait()
            if self._cancelled:
                return False
            self._items[seq] = item
            if on_admit is not None:
                on_admit()
            self._cond.notify_all()
            return True

    def get(self, timeout: Optional[float] = None):
        """Next in-order ``(seq, item)``, or None at end-of-stream / cancellation."""
        deadline = None if timeout is None else time.monotonic() + timeout
        with self._cond:
            while True:
                if self._cancelled:
                    return None
                if self._next in self._items:
                    seq = self._next
                    item = self._items.pop(seq)
                    self._next += 1
                    self._cond.notify_all()
                    return seq, item
                if self._end is not None and self._next >= self._end:
                    return None
                if deadline is None:
                    self._cond.wait()
                else:
                    remaining = deadline - time.monotonic()
                    if remaining <= 0:
                        raise TimeoutError("no in-order item within timeout")
                    self._cond.wait(remaining)

    def close(self, end: int) -> None:
        """Declare that sequences ``>= end`` will never arrive."""
        with self._cond:
            self._end = end
            self._cond.notify_all()

    def cancel(self) -> list:
        """Drop everything queued and wake all waiters; returns the dropped items."""
        with self._cond:
            self._cancelled = True
            dropped = list(self._items.values())
            self._items.clear()
            self._cond.notify_all()
            return dropped

    def __len__(self) -> int:
        with self._cond:
            return len(self._items)


class _StageStats:
    def __init__(self):
        self.lock = threading.Lock()
        self.active = 0
        self.max_active = 0
        self.busy = 0.0
        self.executions = 0

    def enter(self) -> float:
        with self.lock:
            self.active += 1
            self.max_active = max(self.max_active, self.active)
        return time.perf_counter()

    def leave(self, started: float) -> None:
        elapsed = time.perf_counter() - started
        with self.lock:
            self.active -= 1
            self.busy += elapsed
            self.executions += 1


class Pipeline:
    """A running chain of stages.  Threads start on construction.

    >>> p = Pipeline([serialized("double", lambda v: 2 * v)])
    >>> p.submit(21)
    0
    >>> p.shutdown()
    0
    >>> p.collect().result()
    42
    """

    def __init__(self, stages: Iterable[StageSpec], name: str = "pipeline"):
        self.stages = list(stages)
        if not self.stages:
            raise ValueError("a pipeline needs at least one stage")
        self.name = name
        self._queues = [SequencedQueue(s.queue_capacity) for s in self.stages]
        self._output = SequencedQueue(None)
        self._stats = [_StageStats() for _ in self.stages]
        self._lock = threading.Lock()
        self._submitted = 0
        self._collected = 0
        self._discarded = 0
        self._rejected = 0
        self._closed = False
        self._stopped = False
        self._live = 0
        self.max_live = 0
        self._threads: list[threading.Thread] = []
        for i, spec in enumerate(self.stages):
            for w in range(spec.workers):
                t = threading.Thread(target=self._worker, args=(i,),
                                     name=f"{name}-{spec.name}-{w}", daemon=True)
                t.start()
                self._threads.append(t)
        self.t_start = time.perf_counter()

    # -- executor loop -------------------------------------------------
    def _worker(self, i: int) -> None:
        spec = self.stages[i]
        inbox = self._queues[i]
        outbox = self._queues[i + 1] if i + 1 < len(self.stages) else self._output
        stats = self._stats[i]
        while True:
            got = inbox.get()
            if got is None:
                return
            seq, task = got
            task.t_enter[i] = time.perf_counter()
            if task.error is None:
                started = stats.enter()
                try:
                    task.payload = spec.work(task.payload)
                except Exception as exc:  # surfaced to the collector via task.error
                    task.error = StageError(spec.name, i, seq, exc)
                    task.payload = None
                finally:
                    stats.leave(started)
            task.t_exit[i] = time.perf_counter()
            task.advance(i)
            if not outbox.put(seq, task):
                self._discard(1)

    def _discard(self, n: int) -> None:
        with self._lock:
            self._discarded += n
            self._live -= n

    # -- public API ----------------------------------------------------
    def submit(self, payload: Any) -> int:
        """Enqueue a frame at stage 0, blocking while that queue is full."""
        with self._lock:
            if self._closed:
                raise PipelineClosed(f"{self.name} is shut down")
            seq = self._submitted
            self._submitted += 1
        task = Task(seq, payload, len(self.stages), time.perf_counter())

        def admitted():
            with self._lock:
                self._live += 1
                self.max_live = max(self.max_live, self._live)

        if not self._queues[0].put(seq, task, on_admit=admitted):
            with self._lock:
                self._rejected += 1
            raise PipelineClosed(f"{self.name} shut down while frame {seq} was waiting")
        return seq

    def collect(self, timeout: Optional[float] = None) -> Optional[Task]:
        """Next completed task in sequence order, or None at end-of-stream."""
        got = self._output.get(timeout)
        if got is None:
            return None
        task = got[1]
        task.t_complete = time.perf_counter()
        with self._lock:
            self._collected += 1
            self._live -= 1
        return task

    def results(self) -> Iterator[Task]:
        while (task := self.collect()) is not None:
            yield task

    def shutdown(self, drain: bool = True) -> int:
        """Stop accepting work and stop the executors; idempotent.

        With ``drain`` every accepted frame finishes and stays collectable.
        Without it, queued frames are dropped, in-flight executions run to
        completion and are dropped too.  Returns the discarded count.
        """
        with self._lock:
            first = not self._closed
            self._closed = True
            end = self._submitted
        if first:
            if drain:
                for q in self._queues:
                    q.close(end)
                self._output.close(end)
            else:
                for q in (*self._queues, self._output):
                    self._discard(len(q.cancel()))
        for t in self._threads:
            if t is not threading.current_thread():
                t.join()
        with self._lock:
            self._stopped = True
            return self._discarded

    def map(self, payloads: Iterable[Any]) -> Iterator[Task]:
        """Feed ``payloads`` from a helper thread and yield tasks in order."""
        def feed():
            try:
                for p in payloads:
                    self.submit(p)
            except PipelineClosed:
                pass
            finally:
                self.shutdown(drain=True)

        feeder = threading.Thread(target=feed, name=f"{self.name}-feeder", daemon=True)
        feeder.start()
        yield from self.results()
        feeder.join()

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        self.shutdown(drain=exc_type is None)

    # -- introspection -------------------------------------------------
    @property
    def submitted(self) -> int:
        """Frames accepted by :meth:`submit` (rejected submissions excluded)."""
        return self._submitted - self._rejected

    @property
    def collected(self) -> int:
        return self._collected

    @property
    def discarded(self) -> int:
        return self._discarded

    @property
    def is_shut_down(self) -> bool:
        return self._closed

    @property
    def live_tasks(self) -> int:
        return self._live

    def backpressure_events(self) -> int:
        return sum(q.backpressure_events for q in self._queues)

    def stage_report(self) -> list[dict]:
        out = []
        for spec, st in zip(self.stages, self._stats):
            with st.lock:
                out.append({"name": spec.name, "executor": spec.executor,
                            "workers": spec.workers, "busy": st.busy,
                            "executions": st.executions, "max_concurrency": st.max_active})
        return out

    def reset_stats(self) -> None:
        for st in self._stats:
            with st.lock:
                st.busy = 0.0
                st.executions = 0
        for q in self._queues:
            q.backpressure_events = 0
