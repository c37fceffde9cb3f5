"""Task-to-worker allocation with makespan instrumentation.

Two allocation strategies over an abstract worker pool:

* chunked: the m tasks are split into n contiguous chunks up front and
  each worker runs its chunk sequentially (the straightforward scheme);
* dynamic: a shared work queue; an idle worker immediately takes the next
  unstarted task (greedy list scheduling, within (2 - 1/n) of the optimal
  makespan).

Both real executions (serial / thread / process backends) and a
simulated-clock mode are provided. The simulated mode takes prescribed
task durations and reproduces the allocation semantics exactly, so
scheduling properties can be asserted without timing noise. Tie-breaking
is deterministic: tasks are issued in index order and idle workers acquire
them in worker-index order.

Results are always collected by task index, never by completion order.
"""

from __future__ import annotations

import heapq
import time
from concurrent.futures import ProcessPoolExecutor, ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

from .errors import ConfigurationError, InferenceError


@dataclass
class Task:
    """One unit of work; duration is filled in after execution."""

    index: int
    payload: Any = None
    duration: float | None = None


@dataclass(frozen=True)
class TimelineEntry:
    task: int
    start: float
    end: float


@dataclass
class ExecutorTimeline:
    """Per-worker ordered lists of (task, start, end) intervals."""

    workers: list = field(default_factory=list)   # list[list[TimelineEntry]]

    @property
    def n_workers(self) -> int:
        return len(self.workers)

    def all_entries(self):
        return [entry for lane in self.workers for entry in lane]

    def validate(self):
        """Check interval ordering per worker and task uniqueness."""
        seen = set()
        for lane in self.workers:
            last_end = None
            for entry in lane:
                if entry.end < entry.start:
                    raise ConfigurationError(f"entry {entry} runs backwards")
                if last_end is not None and entry.start < last_end - 1e-9:
                    raise ConfigurationError(
                        f"overlapping intervals on one worker near task {entry.task}"
                    )
                last_end = entry.end
                if entry.task in seen:
                    raise ConfigurationError(f"task {entry.task} appears twice")
                seen.add(entry.task)
        return self


def makespan(timeline: ExecutorTimeline) -> float:
    """Overall processing time: last end minus first start (0 if empty)."""
    entries = timeline.all_entries()
    if not entries:
        return 0.0
    return max(e.end for e in entries) - min(e.start for e in entries)


def imbalance_report(timeline: ExecutorTimeline) -> dict:
    """Per-worker busy fraction of the makespan, plus min/max/mean."""
    span = makespan(timeline)
    fractions = []
    for lane in timeline.workers:
        busy = sum(e.end - e.start for e in lane)
        fractions.append(busy / span if span > 0 else 0.0)
    if fractions:
        summary = {
            "min": min(fractions),
            "max": max(fractions),
            "mean": sum(fractions) / len(fractions),
        }
    else:
        summary = {"min": 0.0, "max": 0.0, "mean": 0.0}
    return {"busy_fraction": fractions, "makespan": span, **summary}


def chunk_bounds(m: int, n_workers: int) -> list:
    """Contiguous chunk (start, stop) pairs; sizes differ by at most one."""
    base, extra = divmod(m, n_workers)
    bounds = []
    start = 0
    for w in range(n_workers):
        size = base + (1 if w < extra else 0)
        bounds.append((start, start + size))
        start += size
    return bounds


# --------------------------------------------------------------------------
# Simulated clock
# --------------------------------------------------------------------------

def simulate_schedule(durations: Sequence[float], n_workers: int, strategy: str) -> ExecutorTimeline:
    """Build the exact timeline for prescribed task durations.

    strategy 'chunked' assigns contiguous chunks; 'dynamic' replays greedy
    list scheduling: the worker that frees up earliest (lowest index on
    ties) takes the next task.
    """
    if n_workers < 1:
        raise ConfigurationError("n_workers must be >= 1")
    lanes = [[] for _ in range(n_workers)]
    if strategy == "chunked":
        for w, (start, stop) in enumerate(chunk_bounds(len(durations), n_workers)):
            clock = 0.0
            for i in range(start, stop):
                lanes[w].append(TimelineEntry(i, clock, clock + durations[i]))
                clock += durations[i]
    elif strategy == "dynamic":
        free = [(0.0, w) for w in range(n_workers)]
        heapq.heapify(free)
        for i, d in enumerate(durations):
            clock, w = heapq.heappop(free)
            lanes[w].append(TimelineEntry(i, clock, clock + d))
            heapq.heappush(free, (clock + d, w))
    else:
        raise ConfigurationError(f"unknown strategy {strategy!r}")
    return ExecutorTimeline(workers=lanes)


# --------------------------------------------------------------------------
# Real execution
# --------------------------------------------------------------------------

@dataclass
class MapResult:
    """Outcome of mapping task_fn over a batch.

    results[i] belongs to payload i under every strategy and backend;
    failures maps task index -> error string for tasks whose task_fn
    raised (their results slot is None).
    """

    results: list
    timeline: ExecutorTimeline
    failures: dict

    def raise_if_failed(self, context: str = "task batch"):
        if self.failures:
            idx, msg = next(iter(sorted(self.failures.items())))
            raise InferenceError(
                f"{context}: {len(self.failures)} task(s) failed; "
                f"first failure at task {idx}: {msg}"
            )
        return self


def _run_one(task_fn, index, payload):
    start = time.monotonic()
    try:
        value = task_fn(payload)
        error = None
    except Exception as exc:   # recorded per task, reported with the batch
        value = None
        error = f"{type(exc).__name__}: {exc}"
    return index, value, error, start, time.monotonic()


def _run_chunk(task_fn, indexed_payloads):
    return [_run_one(task_fn, i, p) for i, p in indexed_payloads]


def _collect(records_per_worker, m) -> MapResult:
    results = [None] * m
    failures = {}
    lanes = []
    for records in records_per_worker:
        lane = []
        for index, value, error, start, end in records:
            results[index] = value
            if error is not None:
                failures[index] = error
            lane.append(TimelineEntry(index, start, end))
        lanes.append(lane)
    return MapResult(results, ExecutorTimeline(workers=lanes), failures)


def chunked_map(task_fn: Callable, payloads: Sequence, n_workers: int,
                backend: str = "thread") -> MapResult:
    """Run payloads in n contiguous chunks, one chunk per worker."""
    if n_workers < 1:
        raise ConfigurationError("n_workers must be >= 1")
    m = len(payloads)
    indexed = list(enumerate(payloads))
    chunks = [indexed[a:b] for a, b in chunk_bounds(m, n_workers)]
    if backend == "serial" or n_workers == 1:
        records = [_run_chunk(task_fn, chunk) for chunk in chunks]
    else:
        with _pool(backend, n_workers) as pool:
            futures = [pool.submit(_run_chunk, task_fn, chunk) for chunk in chunks]
            records = [f.result() for f in futures]
    return _collect(records, m)


def dynamic_map(task_fn: Callable, payloads: Sequence, n_workers: int,
                backend: str = "thread") -> MapResult:
    """Run payloads through a shared work queue (greedy allocation).

    Tasks are issued in index order; whichever worker is idle takes the
    next one, so no worker idles while unstarted tasks remain.
    """
    if n_workers < 1:
        raise ConfigurationError("n_workers must be >= 1")
    m = len(payloads)
    if backend == "serial" or n_workers == 1:
        records = [[_run_one(task_fn, i, p) for i, p in enumerate(payloads)]]
        return _collect(records, m)
    with _pool(backend, n_workers) as pool:
        futures = [
            pool.submit(_run_one_tagged, task_fn, i, p)
            for i, p in enumerate(payloads)
        ]
        tagged = [f.result() for f in futures]
    # group by the worker that actually ran each task, in first-start order
    by_worker = {}
    for worker_key, record in tagged:
        by_worker.setdefault(worker_key, []).append(record)
    lanes = sorted(by_worker.values(), key=lambda recs: min(r[3] for r in recs))
    for lane in lanes:
        lane.sort(key=lambda r: r[3])
    return _collect(lanes, m)


def _run_one_tagged(task_fn, index, payload):
    import multiprocessing
    import threading
    worker_key = (multiprocessing.current_process().name,
                  threading.current_thread().name)
    return worker_key, _run_one(task_fn, index, payload)


def _pool(backend: str, n_workers: int):
    if backend == "thread":
        return ThreadPoolExecutor(max_workers=n_workers)
    if backend == "process":
        return ProcessPoolExecutor(max_workers=n_workers)
    raise ConfigurationError(f"unknown backend {backend!r}")


class SimulationExecutor:
    """Maps batches of simulation payloads onto a worker pool.

    The inference layer submits side-effect-free tasks and blocks on the
    whole batch; timelines of past batches are kept for instrumentation.
    Backend 'auto' picks processes when more than one worker is requested
    (simulations are CPU-bound), otherwise runs inline.
    """

    def __init__(self, n_workers: int = 1, strategy: str = "dynamic",
                 backend: str = "auto"):
        if strategy not in ("dynamic", "chunked"):
            raise ConfigurationError(f"unknown strategy {strategy!r}")
        if backend == "auto":
            backend = "serial" if n_workers == 1 else "process"
        if backend not in ("serial", "thread", "process"):
            raise ConfigurationError(f"unknown backend {backend!r}")
        self.n_workers = int(n_workers)
        self.strategy = strategy
        self.backend = backend
        self.timelines = []

    def map(self, task_fn: Callable, payloads: Sequence) -> MapResult:
        mapper = dynamic_map if self.strategy == "dynamic" else chunked_map
        out = mapper(task_fn, payloads, self.n_workers, backend=self.backend)
        self.timelines.append(out.timeline)
        return out
