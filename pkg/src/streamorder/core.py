"""Shared vocabulary: stream tuples, output units, operator and pipeline
descriptions, runtime configuration."""

from __future__ import annotations

import enum
import itertools
import operator
import os
from dataclasses import dataclass, field
from typing import Any, Callable, Hashable, Sequence

from . import _backend


class ConfigError(ValueError):
    """Invalid pipeline or runtime configuration, reported before a run starts."""


class OperatorKind(str, enum.Enum):
    STATELESS = "stateless"
    STATEFUL = "stateful"
    PARTITIONED = "partitioned-stateful"


class StreamTuple:
    """Unit of flow: opaque payload, per-operator serial, optional key.

    ``ordinal`` counts data tuples only (markers and the flush token do not
    advance it), so per-position behaviour such as fractional selectivity
    does not depend on whether metrics are switched on. It defaults to the
    serial.
    """

    __slots__ = ("payload", "serial", "key", "ordinal")

    def __init__(self, payload: Any, serial: int, key: Hashable | None = None,
                 ordinal: int | None = None) -> None:
        self.payload = payload
        self.serial = serial
        self.key = key
        self.ordinal = serial if ordinal is None else ordinal

    def __repr__(self) -> str:
        return f"StreamTuple(serial={self.serial}, key={self.key!r}, payload={self.payload!r})"


class OutputUnit:
    """All outputs produced by one input, travelling under that input's serial.

    ``outputs`` may be empty; the unit still occupies its serial.
    """

    __slots__ = ("serial", "outputs")

    def __init__(self, serial: int, outputs: Sequence[Any] = ()) -> None:
        self.serial = serial
        self.outputs = outputs

    def __repr__(self) -> str:
        return f"OutputUnit(serial={self.serial}, outputs={self.outputs!r})"


class _Flush:
    """End-of-stream token. Passes through every operator in serial order."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self) -> str:
        return "FLUSH"

    def __reduce__(self):
        return (_Flush, ())


FLUSH = _Flush()


def new_serial_counter(backend: str | None = None):
    """Atomic per-operator serial source, starting at 1."""
    return _backend.get(backend).AtomicCounter(1)


def assign_serial(counter) -> int:
    return counter.fetch_add(1)


def cumulative_selectivities(selectivities: Sequence[float]) -> list[float]:
    """Running product of per-operator selectivities since ingress."""
    for s in selectivities:
        if s <= 0:
            raise ValueError(f"selectivity must be positive, got {s}")
    return list(itertools.accumulate(selectivities, operator.mul))


ProcessFn = Callable[[StreamTuple], Sequence[Any]]


@dataclass(frozen=True)
class OperatorSpec:
    """Description of one operator in a linear pipeline.

    ``process`` maps an input tuple to the payloads it produces. For
    partitioned-stateful operators ``key_selector`` maps a payload to a key
    and ``partitioner`` maps a key to a bucket in ``[0, partitions)``.
    ``max_parallelism`` is derived from the kind unless given for a
    stateless operator (None = worker count).
    """

    kind: OperatorKind
    process: ProcessFn
    name: str = ""
    key_selector: Callable[[Any], Hashable] | None = None
    partitioner: Callable[[Hashable], int] | None = None
    partitions: int = 1
    max_parallelism: int | None = None
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self) -> None:
        kind = OperatorKind(self.kind)
        object.__setattr__(self, "kind", kind)
        if self.partitions < 1:
            raise ConfigError(f"{self.name}: partitions must be >= 1")
        if kind is OperatorKind.STATEFUL:
            if self.max_parallelism not in (None, 1):
                raise ConfigError(f"{self.name}: stateful operators admit one worker")
            object.__setattr__(self, "max_parallelism", 1)
        elif kind is OperatorKind.PARTITIONED:
            if self.key_selector is None or self.partitioner is None:
                raise ConfigError(f"{self.name}: partitioned operators need key_selector and partitioner")
            if self.max_parallelism not in (None, self.partitions):
                raise ConfigError(f"{self.name}: partitioned max parallelism must equal partitions")
            object.__setattr__(self, "max_parallelism", self.partitions)
        elif self.max_parallelism is not None and self.max_parallelism < 1:
            raise ConfigError(f"{self.name}: max_parallelism must be >= 1")

    def parallelism(self, worker_count: int) -> int:
        if self.max_parallelism is None:
            return worker_count
        return self.max_parallelism


@dataclass(frozen=True)
class PipelineSpec:
    operators: tuple[OperatorSpec, ...]
    name: str = "pipeline"

    def __post_init__(self) -> None:
        object.__setattr__(self, "operators", tuple(self.operators))
        if not self.operators:
            raise ConfigError("pipeline must contain at least one operator")

    def __len__(self) -> int:
        return len(self.operators)

    @property
    def kinds(self) -> tuple[OperatorKind, ...]:
        return tuple(op.kind for op in self.operators)


def usable_cpus() -> int:
    try:
        return len(os.sched_getaffinity(0))
    except AttributeError:
        return os.cpu_count() or 1


HEURISTICS = ("qst", "lp", "et", "ct")
AUTO_YIELD_QUANTUM_US = 50.0
REORDER_SCHEMES = ("nonblocking", "locked")
PARTITION_SCHEMES = ("hybrid", "partitioned", "shared")


@dataclass
class RuntimeConfig:
    """Knobs for one engine run. Durations are in microseconds."""

    worker_count: int = 4
    time_slice_us: float = 1000.0
    buffer_capacity: int = 1024
    qst_capacity: float = 10_000.0
    ct_window_us: float | None = None
    stats_ewma_alpha: float = 0.25
    marker_interval: int = 1000
    heuristic: str = "ct"
    reorder: str = "nonblocking"
    backend: str | None = None
    ingress_limit: int = 10_000
    idle_backoff_max_us: float = 100.0
    switch_interval_us: float | None = None
    # None: yield every AUTO_YIELD_QUANTUM_US when workers outnumber CPUs; 0: never
    yield_quantum_us: float | None = None

    def __post_init__(self) -> None:
        if self.ct_window_us is None:
            self.ct_window_us = 100 * self.time_slice_us

    def effective_yield_quantum_us(self) -> float:
        """Processing time between voluntary CPU yields at tuple boundaries.

        When threads outnumber processors the OS may park a worker in the
        middle of a tuple for a whole kernel timeslice while its peers keep
        running; everything behind that tuple then waits in the reorder
        buffer. Yielding at tuple boundaries keeps in-flight tuples moving.
        """
        if self.yield_quantum_us is not None:
            return self.yield_quantum_us
        return AUTO_YIELD_QUANTUM_US if self.worker_count > usable_cpus() else 0.0

    def validate(self) -> "RuntimeConfig":
        if self.worker_count < 1:
            raise ConfigError("worker_count must be >= 1")
        if self.switch_interval_us is not None and self.switch_interval_us <= 0:
            raise ConfigError("switch_interval_us must be positive")
        if self.yield_quantum_us is not None and self.yield_quantum_us < 0:
            raise ConfigError("yield_quantum_us must be >= 0")
        for name in ("time_slice_us", "qst_capacity", "ct_window_us", "idle_backoff_max_us"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if self.marker_interval < 1 or self.ingress_limit < 1:
            raise ConfigError("marker_interval and ingress_limit must be >= 1")
        cap = self.buffer_capacity
        if cap < 1 or cap & (cap - 1):
            raise ConfigError(f"buffer_capacity must be a power of two, got {cap}")
        if cap < self.worker_count:
            raise ConfigError("buffer_capacity must be >= worker_count")
        if not 0 < self.stats_ewma_alpha <= 1:
            raise ConfigError("stats_ewma_alpha must be in (0, 1]")
        if self.heuristic not in HEURISTICS:
            raise ConfigError(f"unknown heuristic {self.heuristic!r}")
        if self.reorder not in REORDER_SCHEMES:
            raise ConfigError(f"unknown reorder scheme {self.reorder!r}")
        try:
            _backend.get(self.backend)
        except (ValueError, RuntimeError) as exc:
            raise ConfigError(str(exc)) from exc
        return self
