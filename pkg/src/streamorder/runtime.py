"""Worker pool and execution loop.

One feeder thread plays ingress (operator 0's producer); ``worker_count``
worker threads loop over scheduler assignments. A FLUSH token follows the
input set through every operator; its arrival at egress means every earlier
tuple has left the pipeline, after which the workers stop.
"""

from __future__ import annotations

import enum
import logging
import sys
import threading
import time
import traceback
from dataclasses import dataclass, field
from typing import Any, Iterable

from .core import FLUSH, ConfigError, PipelineSpec, RuntimeConfig
from .metrics import Marker, RunMetrics, TooFewMarkers, stamp_marker, summarize
from .operators import OperatorInstance
from .scheduler import OpStats, Scheduler

log = logging.getLogger(__name__)


class RunState(str, enum.Enum):
    IDLE = "idle"
    RUNNING = "running"
    DRAINING = "draining"
    STOPPED = "stopped"


class EngineError(RuntimeError):
    """A worker or the feeder failed; the run was aborted."""


class RunTimeout(EngineError):
    pass


@dataclass
class RunResult:
    egress_count: int
    egress: list[Any] | None
    op_stats: list[OpStats]
    enqueued: list[int]
    markers: list[Marker]
    metrics: RunMetrics | None
    wall_s: float
    ingress_count: int
    samples: list[tuple[float, int]] = field(default_factory=list)
    retries: list[int] = field(default_factory=list)

    @property
    def throughput_tps(self) -> float:
        if self.metrics is not None:
            return self.metrics.throughput_tps
        return self.ingress_count / self.wall_s if self.wall_s > 0 else 0.0

    @property
    def latency_ms(self) -> float:
        return self.metrics.latency_ms if self.metrics is not None else float("nan")


class Engine:
    """One assembled pipeline, runnable once."""

    def __init__(
        self,
        pipeline: PipelineSpec,
        config: RuntimeConfig,
        scheme: str = "hybrid",
        record_egress: bool = True,
        markers: bool = True,
    ) -> None:
        if not isinstance(pipeline, PipelineSpec):
            pipeline = PipelineSpec(tuple(pipeline))
        self.config = config.validate()
        self.pipeline = pipeline
        self.scheme = scheme
        self.markers_enabled = markers
        self.state = RunState.IDLE

        self._stop = threading.Event()
        self._done = threading.Event()
        self._errors: list[tuple[str, BaseException, str]] = []
        self._egress: list[Any] | None = [] if record_egress else None
        self._egress_count = 0
        self._markers: list[Marker] = []

        for spec in pipeline.operators:
            reset = getattr(spec.process, "reset", None)
            if callable(reset):
                reset()

        ops: list[OperatorInstance] = []
        downstream = self._egress_fn
        for i in range(len(pipeline) - 1, -1, -1):
            op = OperatorInstance(
                pipeline.operators[i], i, config, downstream, scheme, abort=self._stop.is_set
            )
            ops.append(op)
            downstream = op.enqueue_input
        ops.reverse()
        self.ops = ops
        self.scheduler = Scheduler([op.size for op in ops], [op.M for op in ops], config)

    # -- egress ---------------------------------------------------------

    def _egress_fn(self, payload: Any) -> None:
        # serialized: called only from the last operator's exit section or
        # from its single stateful worker
        if type(payload) is Marker:
            stamp_marker(payload, "egress")
        elif payload is FLUSH:
            self.state = RunState.STOPPED
            self._done.set()
        else:
            self._egress_count += 1
            if self._egress is not None:
                self._egress.append(payload)

    @property
    def egress_count(self) -> int:
        return self._egress_count

    # -- threads --------------------------------------------------------

    def worker_loop(self, worker_id: int) -> None:
        sched = self.scheduler
        ops = self.ops
        stop = self._stop
        park_min = 10e-6
        park_max = self.config.idle_backoff_max_us / 1e6
        park = park_min
        try:
            while not stop.is_set():
                a = sched.next_assignment(worker_id)
                if a is None:
                    time.sleep(park)
                    park = min(park * 2, park_max)
                    continue
                try:
                    report = ops[a.op].work(worker_id, a.max_tuples)
                except BaseException:
                    sched.stats[a.op].w -= 1
                    raise
                sched.report_completion(worker_id, a.op, report)
                if report.processed:
                    park = park_min
                else:
                    # e.g. a partitioned-queue worker whose buckets are all empty
                    time.sleep(park)
                    park = min(park * 2, park_max)
        except BaseException as exc:
            self._fail(f"worker {worker_id}", exc)

    def _fail(self, who: str, exc: BaseException) -> None:
        if not self._stop.is_set():
            self._errors.append((who, exc, traceback.format_exc()))
        self._stop.set()
        self._done.set()

    def _feed(self, source: Iterable[Any], count: int | None, duration_s: float | None,
              rate: float | None) -> None:
        op0 = self.ops[0]
        enqueue = op0.enqueue_input
        size = op0.size
        limit = self.config.ingress_limit
        interval = self.config.marker_interval
        markers = self.markers_enabled
        stop = self._stop
        start = time.monotonic()
        deadline = start + duration_s if duration_s is not None else None
        n = 0
        try:
            for payload in source:
                if count is not None and n >= count:
                    break
                if n & 0xFF == 0:
                    if stop.is_set():
                        return
                    now = time.monotonic()
                    if deadline is not None and now >= deadline:
                        break
                    while size() > limit and not stop.is_set():
                        time.sleep(50e-6)
                if rate is not None:
                    due = start + n / rate
                    delay = due - time.monotonic()
                    if delay > 0:
                        time.sleep(delay)
                    if deadline is not None and time.monotonic() >= deadline:
                        break
                if markers and n % interval == 0:
                    m = Marker(len(self._markers) + 1)
                    self._markers.append(m)
                    stamp_marker(m, "ingress")
                    enqueue(m)
                enqueue(payload)
                n += 1
            self.ingress_count = n
            self.state = RunState.DRAINING
            enqueue(FLUSH)
        except BaseException as exc:
            self.ingress_count = n
            self._fail("feeder", exc)

    def run(
        self,
        source: Iterable[Any],
        count: int | None = None,
        duration_s: float | None = None,
        rate: float | None = None,
        timeout_s: float | None = None,
        sample_interval_s: float | None = None,
    ) -> RunResult:
        if self.state is not RunState.IDLE:
            raise EngineError("an Engine instance runs once")
        if count is None and duration_s is None and not hasattr(source, "__len__"):
            raise ConfigError("unbounded source needs count or duration_s")
        self.ingress_count = 0
        self.state = RunState.RUNNING

        old_switch = sys.getswitchinterval()
        if self.config.switch_interval_us is not None:
            sys.setswitchinterval(self.config.switch_interval_us / 1e6)
        workers = [
            threading.Thread(target=self.worker_loop, args=(i,), name=f"worker-{i}", daemon=True)
            for i in range(self.config.worker_count)
        ]
        feeder = threading.Thread(
            target=self._feed, args=(iter(source), count, duration_s, rate), name="feeder",
            daemon=True,
        )
        samples: list[tuple[float, int]] = []
        t0 = time.monotonic()
        try:
            for w in workers:
                w.start()
            feeder.start()
            next_sample = t0 + sample_interval_s if sample_interval_s else None
            deadline = t0 + timeout_s if timeout_s else None
            while not self._done.wait(0.05):
                now = time.monotonic()
                if next_sample is not None and now >= next_sample:
                    samples.append((now - t0, self._egress_count))
                    next_sample += sample_interval_s
                if deadline is not None and now >= deadline:
                    self._stop.set()
                    raise RunTimeout(self._diagnostics(f"run exceeded {timeout_s}s"))
            wall = time.monotonic() - t0
            if sample_interval_s:
                samples.append((wall, self._egress_count))
        finally:
            self._stop.set()
            feeder.join(5)
            for w in workers:
                w.join(5)
            sys.setswitchinterval(old_switch)
        if self._errors:
            who, exc, tb = self._errors[0]
            raise EngineError(f"{who} failed: {exc!r}\n{tb}") from exc
        self.state = RunState.STOPPED
        return self._result(wall, samples)

    def _result(self, wall: float, samples) -> RunResult:
        stats = self.scheduler.snapshot()
        metrics = None
        if self._markers:
            total_busy = sum(st.busy_us for st in stats) or 1.0
            share = {op.name: st.busy_us / total_busy for op, st in zip(self.ops, stats)}
            try:
                metrics = summarize(self._markers, self.config.marker_interval, share)
            except TooFewMarkers:
                metrics = None
        return RunResult(
            egress_count=self._egress_count,
            egress=self._egress,
            op_stats=stats,
            enqueued=[op.enqueued for op in self.ops],
            markers=list(self._markers),
            metrics=metrics,
            wall_s=wall,
            ingress_count=self.ingress_count,
            samples=samples,
            retries=[op.retries for op in self.ops],
        )

    def _diagnostics(self, reason: str) -> str:
        lines = [reason]
        for op, st in zip(self.ops, self.scheduler.snapshot()):
            r = op.reorderer
            lines.append(
                f"  {op.name}: kind={op.kind.value} I={op.size()} enq={op.enqueued} "
                f"w={st.w}/{st.M} processed={st.processed} "
                f"next={getattr(r, 'next', '-')}"
            )
        lines.append(f"  egress={self._egress_count} ingress={self.ingress_count}")
        return "\n".join(lines)


def run(
    pipeline: PipelineSpec,
    config: RuntimeConfig,
    source: Iterable[Any],
    count: int | None = None,
    duration_s: float | None = None,
    scheme: str = "hybrid",
    record_egress: bool = True,
    markers: bool = True,
    **kwargs,
) -> RunResult:
    """Assemble an engine for ``pipeline`` and run it over ``source``."""
    engine = Engine(pipeline, config, scheme=scheme, record_egress=record_egress, markers=markers)
    return engine.run(source, count=count, duration_s=duration_s, **kwargs)
