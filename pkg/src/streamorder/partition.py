"""Worklists for each operator kind.

* ``SharedWorklist`` - MPMC FIFO for stateless and stateful operators.
* ``HybridQueue`` - master queue of bucket indices plus per-bucket tuple
  queues and delegation counters; near-arrival-order partitioned processing.
* ``PartitionedQueueSet`` - one queue per bucket, buckets statically owned
  by workers (the classic baseline).
* ``SharedKeyLockQueue`` - single queue where dequeue and bucket-lock
  acquisition are made atomic by a global lock. Correct but blocking.

``collections.deque`` append/popleft are atomic in CPython and serve as the
linearizable FIFO everywhere.
"""

from __future__ import annotations

import threading
import zlib
from collections import deque
from typing import Callable, Hashable

from . import _backend
from .core import StreamTuple

Operate = Callable[[StreamTuple], None]

_GOLDEN = 0x9E3779B1


def _stable_hash(key: Hashable) -> int:
    if isinstance(key, int):
        return (key * _GOLDEN) & 0xFFFFFFFF
    if isinstance(key, bytes):
        return zlib.crc32(key)
    if isinstance(key, str):
        return zlib.crc32(key.encode())
    return hash(key) & 0xFFFFFFFF


def hash_partitioner(p: int) -> Callable[[Hashable], int]:
    """Multiplicative hash of the key into ``p`` buckets."""
    if p < 1:
        raise ValueError("p must be >= 1")

    def partition(key: Hashable) -> int:
        return (_stable_hash(key) * p) >> 32

    return partition


def range_partitioner(p: int, key_space: int) -> Callable[[int], int]:
    """Contiguous key ranges of (nearly) equal width over ``[0, key_space)``."""
    if p < 1 or key_space < 1:
        raise ValueError("p and key_space must be >= 1")

    def partition(key: int) -> int:
        b = key * p // key_space
        return min(max(b, 0), p - 1)

    return partition


class SharedWorklist:
    __slots__ = ("_q", "enqueue", "try_dequeue_raw")

    def __init__(self) -> None:
        self._q: deque = deque()
        self.enqueue = self._q.append
        # raises IndexError when empty; the hot loops catch it directly
        self.try_dequeue_raw = self._q.popleft

    def try_dequeue(self) -> StreamTuple | None:
        try:
            return self._q.popleft()
        except IndexError:
            return None

    def size(self) -> int:
        return len(self._q)

    __len__ = size


class HybridQueue:
    """Master/partition queue with per-bucket delegation counters."""

    def __init__(self, p: int, backend: str | None = None, debug: bool = False) -> None:
        if p < 1:
            raise ValueError("p must be >= 1")
        kernels = _backend.get(backend)
        self.p = p
        self.master: deque = deque()
        self.partition_queues: list[deque] = [deque() for _ in range(p)]
        self.count = kernels.AtomicIntArray(p)
        self._consume = kernels.hybrid_consume
        self._producer = threading.Lock() if debug else None

    def add_input(self, t: StreamTuple, bucket: int) -> None:
        producer = self._producer
        if producer is not None and not producer.acquire(False):
            raise AssertionError("concurrent producers on a hybrid queue")
        try:
            # bucket queue first: a consumer that sees the master entry must
            # find the tuple already there
            self.partition_queues[bucket].append(t)
            self.master.append(bucket)
        finally:
            if producer is not None:
                producer.release()

    def consume(self, operate: Operate, budget: int) -> int:
        return self._consume(self.master, self.partition_queues, self.count, operate, budget)

    def size(self) -> int:
        return len(self.master)

    __len__ = size

    def pending(self) -> int:
        return sum(len(q) for q in self.partition_queues)


def hq_add_input(q: HybridQueue, t: StreamTuple, partitioner: Callable[[Hashable], int]) -> None:
    q.add_input(t, partitioner(t.key))


def hq_consume(q: HybridQueue, operate: Operate, budget: int) -> int:
    """Process tuples via the master queue; returns tuples this worker processed.

    A worker that wins a bucket (counter was 0) keeps draining it while
    delegations arrive, even past ``budget``.
    """
    return q.consume(operate, budget)


def block_ownership(p: int, workers: int) -> list[list[int]]:
    """Contiguous bucket blocks per worker: 4 buckets / 2 workers -> [[0,1],[2,3]]."""
    return [list(range(w * p // workers, (w + 1) * p // workers)) for w in range(workers)]


class PartitionedQueueSet:
    """One FIFO per bucket; worker ``w`` only ever touches its own buckets."""

    def __init__(self, p: int, workers: int) -> None:
        if p < 1 or workers < 1:
            raise ValueError("p and workers must be >= 1")
        self.p = p
        self.queues: list[deque] = [deque() for _ in range(p)]
        self.owned = block_ownership(p, workers)

    def add_input(self, t: StreamTuple, bucket: int) -> None:
        self.queues[bucket].append(t)

    def consume(self, worker_id: int, operate: Operate, budget: int) -> int:
        return pq_consume(self, worker_id, operate, budget)

    def size(self) -> int:
        return sum(len(q) for q in self.queues)

    __len__ = size

    def owned_size(self, worker_id: int) -> int:
        queues = self.queues
        return sum(len(queues[b]) for b in self.owned[worker_id])


def pq_consume(q: PartitionedQueueSet, worker_id: int, operate: Operate, budget: int) -> int:
    """Round-robin over this worker's non-empty bucket queues."""
    if worker_id >= len(q.owned):
        return 0
    mine = [q.queues[b] for b in q.owned[worker_id]]
    processed = 0
    progress = True
    while progress and processed < budget:
        progress = False
        for queue in mine:
            if processed >= budget:
                break
            try:
                t = queue.popleft()
            except IndexError:
                continue
            operate(t)
            processed += 1
            progress = True
    return processed


class SharedKeyLockQueue:
    """Single queue; dequeue + bucket lock happen atomically under a global lock.

    Per-key order holds because bucket locks are taken in dequeue order, but a
    worker waiting on a busy bucket stalls every other consumer.
    """

    def __init__(self, p: int) -> None:
        if p < 1:
            raise ValueError("p must be >= 1")
        self.p = p
        self.q: deque = deque()
        self._global = threading.Lock()
        self._bucket_locks = [threading.Lock() for _ in range(p)]

    def add_input(self, t: StreamTuple, bucket: int) -> None:
        self.q.append((bucket, t))

    def consume(self, operate: Operate, budget: int) -> int:
        processed = 0
        q = self.q
        glock = self._global
        locks = self._bucket_locks
        while processed < budget:
            with glock:
                try:
                    bucket, t = q.popleft()
                except IndexError:
                    break
                lock = locks[bucket]
                lock.acquire()
            try:
                operate(t)
            finally:
                lock.release()
            processed += 1
        return processed

    def size(self) -> int:
        return len(self.q)

    __len__ = size
