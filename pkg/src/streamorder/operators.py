"""Executable operator instances and parametric benchmark operators.

An ``OperatorInstance`` binds an ``OperatorSpec`` to its inlet worklist, its
serial counter and (for stateless and partitioned kinds) its reorderer.
Workers call ``work``; upstream emission calls ``enqueue_input``.
"""

from __future__ import annotations

import hashlib
import os
import random
import time
from fractions import Fraction
from typing import Any, Callable, Hashable

import numpy as np

from . import _backend
from .core import (
    FLUSH,
    ConfigError,
    OperatorKind,
    OperatorSpec,
    OutputUnit,
    RuntimeConfig,
    StreamTuple,
    new_serial_counter,
)
from .metrics import Marker, stamp_marker
from .partition import (
    HybridQueue,
    PartitionedQueueSet,
    SharedKeyLockQueue,
    SharedWorklist,
    hash_partitioner,
    range_partitioner,
)
from .reorder import make_reorderer, retry_send
from .scheduler import WorkReport

Emit = Callable[[Any], None]


def is_control(payload: Any) -> bool:
    return payload is FLUSH or type(payload) is Marker


class OperatorInstance:
    """Runtime form of one pipeline stage.

    ``downstream`` receives each output payload in order; it is the next
    stage's ``enqueue_input`` or the engine's egress.
    """

    def __init__(
        self,
        spec: OperatorSpec,
        index: int,
        config: RuntimeConfig,
        downstream: Emit,
        scheme: str = "hybrid",
        abort: Callable[[], bool] | None = None,
    ) -> None:
        self.spec = spec
        self.index = index
        self.kind = spec.kind
        self.config = config
        self.downstream = downstream
        self.scheme = scheme
        self.M = spec.parallelism(config.worker_count)
        self.serials = new_serial_counter(config.backend)
        self._ordinal = 0
        self._abort = abort
        self._process = spec.process
        self._first = index == 0
        self._yield_ns = int(config.effective_yield_quantum_us() * 1000)
        self.retries = 0

        kind = spec.kind
        if kind is OperatorKind.PARTITIONED:
            p = spec.partitions
            if scheme == "hybrid":
                self.inlet = HybridQueue(p, backend=config.backend)
            elif scheme == "partitioned":
                self.inlet = PartitionedQueueSet(p, config.worker_count)
            elif scheme == "shared":
                self.inlet = SharedKeyLockQueue(p)
            else:
                raise ConfigError(f"unknown partition scheme {scheme!r}")
            self._key_selector = spec.key_selector
            self._partitioner = spec.partitioner
        else:
            self.inlet = SharedWorklist()

        if kind is OperatorKind.STATEFUL:
            self.reorderer = None
            self._inside = _backend.get(config.backend).AtomicFlag()
        else:
            self.reorderer = make_reorderer(
                config.reorder, self._emit_unit, config.buffer_capacity, config.backend
            )
        self.size = self.inlet.size

    @property
    def name(self) -> str:
        return self.spec.name or f"op{self.index}"

    @property
    def enqueued(self) -> int:
        return self.serials.load() - 1

    def _emit_unit(self, unit: OutputUnit) -> None:
        emit = self.downstream
        for payload in unit.outputs:
            emit(payload)

    def enqueue_input(self, payload: Any) -> None:
        serial = self.serials.fetch_add(1)
        if payload is FLUSH or type(payload) is Marker:
            ordinal = 0
        else:
            # single producer per operator, so a plain counter suffices
            self._ordinal += 1
            ordinal = self._ordinal
        if self.kind is not OperatorKind.PARTITIONED:
            self.inlet.enqueue(StreamTuple(payload, serial, None, ordinal))
            return
        if payload is FLUSH:
            key, bucket = None, 0
        elif ordinal == 0:
            key, bucket = None, payload.id % self.spec.partitions
        else:
            key = self._key_selector(payload)
            bucket = self._partitioner(key)
        self.inlet.add_input(StreamTuple(payload, serial, key, ordinal), bucket)

    def _outputs(self, t: StreamTuple):
        payload = t.payload
        if type(payload) is Marker:
            if self._first:
                stamp_marker(payload, "first_processing")
            return (payload,)
        if payload is FLUSH:
            return (payload,)
        return self._process(t)

    def work(self, worker_id: int, max_tuples: int) -> WorkReport:
        start = time.perf_counter_ns()
        if self.kind is OperatorKind.STATEFUL:
            processed, produced = self._work_stateful(max_tuples)
        else:
            processed, produced = self._work_parallel(worker_id, max_tuples)
        busy_us = (time.perf_counter_ns() - start) / 1000.0
        return WorkReport(processed, produced, busy_us)

    def _work_stateful(self, max_tuples: int) -> tuple[int, int]:
        if self._inside.test_and_set():
            raise AssertionError(f"{self.name}: second worker inside a stateful operator")
        try:
            pop = self.inlet.try_dequeue_raw
            outputs = self._outputs
            emit = self.downstream
            quantum = self._yield_ns
            clock = time.perf_counter_ns
            last_yield = clock()
            processed = produced = 0
            while processed < max_tuples:
                try:
                    t = pop()
                except IndexError:
                    break
                outs = outputs(t)
                for payload in outs:
                    emit(payload)
                processed += 1
                produced += len(outs)
                if quantum and clock() - last_yield >= quantum:
                    os.sched_yield()
                    last_yield = clock()
            return processed, produced
        finally:
            self._inside.clear()

    def _work_parallel(self, worker_id: int, max_tuples: int) -> tuple[int, int]:
        outputs = self._outputs
        reorderer = self.reorderer
        abort = self._abort
        produced = 0
        retries = 0

        def operate(t: StreamTuple) -> None:
            nonlocal produced, retries
            outs = outputs(t)
            produced += len(outs)
            unit = OutputUnit(t.serial, outs)
            if not reorderer.send(unit):
                retries += retry_send(reorderer, unit, abort)

        quantum = self._yield_ns
        if quantum:
            clock = time.perf_counter_ns
            last_yield = clock()
            send_unit = operate

            def operate(t: StreamTuple) -> None:
                nonlocal last_yield
                send_unit(t)
                if clock() - last_yield >= quantum:
                    os.sched_yield()
                    last_yield = clock()

        inlet = self.inlet
        if self.kind is OperatorKind.STATELESS:
            pop = inlet.try_dequeue_raw
            processed = 0
            while processed < max_tuples:
                try:
                    t = pop()
                except IndexError:
                    break
                operate(t)
                processed += 1
        elif self.scheme == "hybrid":
            processed = inlet.consume(operate, max_tuples)
        elif self.scheme == "partitioned":
            processed = inlet.consume(worker_id, operate, max_tuples)
        else:
            processed = inlet.consume(operate, max_tuples)
        if retries:
            self.retries += retries
        return processed, produced


# -- simple operators -------------------------------------------------------


def identity(t: StreamTuple):
    return (t.payload,)


class JitterIdentity:
    """Identity with random scheduling perturbation.

    With probability ``p_yield`` the worker yields the interpreter lock and
    with probability ``p_sleep`` it sleeps briefly, so workers finish inputs
    out of serial order.
    """

    def __init__(self, seed: int, p_yield: float = 0.05, p_sleep: float = 0.002) -> None:
        self._rng = random.Random(seed)
        self.p_yield = p_yield
        self.p_sleep = p_sleep

    def __call__(self, t: StreamTuple):
        r = self._rng.random()
        if r < self.p_sleep:
            time.sleep(1e-5)
        elif r < self.p_yield:
            os.sched_yield()
        return (t.payload,)


# -- parametric operators ---------------------------------------------------

KEY_BYTES = 4
ROW_BLOCK = 1024
_calibration_cache: dict[tuple, int] = {}


def payload_key(payload: bytes, key_space: int) -> int:
    return int.from_bytes(payload[:KEY_BYTES], "little") % key_space


def _as_fraction(x) -> Fraction:
    if isinstance(x, Fraction):
        return x
    if isinstance(x, float):
        return Fraction(repr(x))
    return Fraction(x)


class ParametricOperator:
    """Deterministic matrix work over the input tuple plus hash-based outputs.

    * cost: ``work_units`` matrix rows applied to the payload vector,
      calibrated so one call takes about ``target_cost_us``;
    * selectivity: the t-th data tuple (its ``ordinal``) emits
      ``floor(t*s) - floor((t-1)*s)`` outputs, i.e. a running accumulator
      evaluated in arrival order, which keeps stateless instances pure;
    * state: one ``state_size``-byte digest, global (stateful) or per key
      (partitioned), chained through every input so any processing-order
      violation changes the output bytes.
    """

    def __init__(
        self,
        kind: OperatorKind | str,
        target_cost_us: float,
        selectivity=1,
        tuple_size: int = 64,
        state_size: int = 16,
        key_space: int = 1000,
        seed: int = 0,
        calibrate: bool = True,
    ) -> None:
        if target_cost_us <= 0:
            raise ValueError("target_cost_us must be positive")
        sel = _as_fraction(selectivity)
        if sel <= 0:
            raise ValueError("selectivity must be positive")
        if tuple_size < KEY_BYTES + 4:
            raise ValueError(f"tuple_size must be >= {KEY_BYTES + 4}")
        self.kind = OperatorKind(kind)
        self.target_cost_us = float(target_cost_us)
        self.selectivity = sel
        self._num, self._den = sel.numerator, sel.denominator
        self.tuple_size = tuple_size
        self.state_size = max(1, min(state_size, 64))
        self.key_space = key_space
        self.seed = seed
        rng = np.random.default_rng(seed)
        self._matrix = rng.integers(0, 4, size=(ROW_BLOCK, tuple_size)).astype(np.float64)
        self._salt = seed.to_bytes(8, "little", signed=True)
        self.work_units = 0
        self.reset()
        if calibrate:
            self.work_units = calibrate_work_units(self)
            self.reset()

    def reset(self) -> None:
        self._global_state = bytes(self.state_size)
        self._keyed_state: dict[Hashable, bytes] = {}

    def output_count(self, ordinal: int) -> int:
        num, den = self._num, self._den
        return (ordinal * num) // den - ((ordinal - 1) * num) // den

    def _burn(self, payload: bytes) -> int:
        units = self.work_units
        if units <= 0:
            return 0
        x = np.frombuffer(payload, dtype=np.uint8, count=self.tuple_size).astype(np.float64)
        full, rem = divmod(units, ROW_BLOCK)
        acc = 0.0
        m = self._matrix
        for _ in range(full):
            acc += float((m @ x).sum())
        if rem:
            acc += float((m[:rem] @ x).sum())
        # integer-valued products: exact in float64, so deterministic
        return int(acc) & 0xFFFFFFFF

    def _expand(self, seed_bytes: bytes, j: int) -> bytes:
        size = self.tuple_size
        h = hashlib.blake2b(seed_bytes + j.to_bytes(4, "little"), digest_size=64).digest()
        if size <= 64:
            return h[:size]
        return (h * (size // 64 + 1))[:size]

    def __call__(self, t: StreamTuple):
        payload = t.payload
        fold = self._burn(payload).to_bytes(4, "little")
        kind = self.kind
        if kind is OperatorKind.STATELESS:
            seed = self._salt + payload + fold
        elif kind is OperatorKind.STATEFUL:
            state = hashlib.blake2b(
                self._global_state + payload + fold, digest_size=self.state_size
            ).digest()
            self._global_state = state
            seed = self._salt + state + payload
        else:
            key = t.key
            prev = self._keyed_state.get(key, b"")
            state = hashlib.blake2b(prev + payload + fold, digest_size=self.state_size).digest()
            self._keyed_state[key] = state
            seed = self._salt + state + payload
        n = self.output_count(t.ordinal)
        if n == 0:
            return ()
        if n == 1:
            return (self._expand(seed, 0),)
        expand = self._expand
        return [expand(seed, j) for j in range(n)]


def measure_cost_us(op: ParametricOperator, samples: int) -> float:
    rng = random.Random(op.seed ^ 0x5EED)
    tuples = [
        StreamTuple(rng.randbytes(op.tuple_size), serial=i + 1, key=rng.randrange(op.key_space))
        for i in range(samples)
    ]
    op(tuples[0])
    start = time.perf_counter_ns()
    for t in tuples:
        op(t)
    return (time.perf_counter_ns() - start) / 1000.0 / samples


def calibrate_work_units(op: ParametricOperator) -> int:
    """Binary-search the matrix work size that hits ``op.target_cost_us``."""
    key = (op.kind, op.target_cost_us, op.selectivity, op.tuple_size, op.state_size)
    if key in _calibration_cache:
        return _calibration_cache[key]
    target = op.target_cost_us
    samples = int(min(400, max(5, 20_000 / target)))

    def cost(units: int) -> float:
        op.work_units = units
        # best of three damps scheduler noise
        return min(measure_cost_us(op, samples) for _ in range(3))

    if cost(0) >= target:
        result = 0
    else:
        lo, hi = 0, 1
        while cost(hi) < target:
            lo, hi = hi, hi * 2
        while hi - lo > max(1, lo // 64):
            mid = (lo + hi) // 2
            if cost(mid) < target:
                lo = mid
            else:
                hi = mid
        result = hi
    _calibration_cache[key] = result
    op.work_units = result
    return result


def make_parametric(
    kind: OperatorKind | str,
    target_cost_us: float,
    selectivity=1,
    tuple_size: int = 64,
    state_size: int = 16,
    partitions: int = 1,
    key_space: int = 1000,
    partitioning: str = "hash",
    seed: int = 0,
    name: str = "",
    calibrate: bool = True,
) -> OperatorSpec:
    """Build an ``OperatorSpec`` around a calibrated ``ParametricOperator``."""
    kind = OperatorKind(kind)
    proc = ParametricOperator(
        kind, target_cost_us, selectivity, tuple_size, state_size, key_space, seed, calibrate
    )
    meta = {
        "target_cost_us": float(target_cost_us),
        "selectivity": float(proc.selectivity),
        "work_units": proc.work_units,
    }
    if kind is not OperatorKind.PARTITIONED:
        return OperatorSpec(kind, proc, name=name, meta=meta)
    if partitioning == "hash":
        partitioner = hash_partitioner(partitions)
    elif partitioning == "range":
        partitioner = range_partitioner(partitions, key_space)
    else:
        raise ConfigError(f"unknown partitioning {partitioning!r}")

    def key_selector(payload: bytes, _k=key_space) -> int:
        return int.from_bytes(payload[:KEY_BYTES], "little") % _k

    return OperatorSpec(
        kind,
        proc,
        name=name,
        key_selector=key_selector,
        partitioner=partitioner,
        partitions=partitions,
        meta=meta,
    )
