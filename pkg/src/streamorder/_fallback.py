"""Pure-Python twins of the compiled kernels in ``_kernels.pyx``.

CPython has no user-level atomic read-modify-write, so integer fetch-add is
emulated with a short mutex. Everything else relies only on operations the
interpreter already performs atomically (list item load/store, deque
append/popleft) and on ``Lock.acquire(blocking=False)`` as test-and-set.
"""

from __future__ import annotations

import threading

BACKEND_NAME = "python"


class AtomicCounter:
    __slots__ = ("_value", "_lock")

    def __init__(self, initial: int = 0) -> None:
        self._value = initial
        self._lock = threading.Lock()

    def fetch_add(self, delta: int = 1) -> int:
        with self._lock:
            old = self._value
            self._value = old + delta
        return old

    def fetch_sub(self, delta: int = 1) -> int:
        return self.fetch_add(-delta)

    def load(self) -> int:
        return self._value

    def store(self, value: int) -> None:
        self._value = value

    def __repr__(self) -> str:
        return f"AtomicCounter({self._value})"


class AtomicFlag:
    __slots__ = ("_lock",)

    def __init__(self) -> None:
        self._lock = threading.Lock()

    def test_and_set(self) -> bool:
        return not self._lock.acquire(False)

    def clear(self) -> None:
        self._lock.release()

    @property
    def is_set(self) -> bool:
        return self._lock.locked()


class AtomicIntArray:
    __slots__ = ("_data", "_lock")

    def __init__(self, n: int) -> None:
        if n < 1:
            raise ValueError("AtomicIntArray length must be >= 1")
        self._data = [0] * n
        self._lock = threading.Lock()

    def __len__(self) -> int:
        return len(self._data)

    def fetch_add(self, i: int, delta: int = 1) -> int:
        data = self._data
        with self._lock:
            old = data[i]
            data[i] = old + delta
        return old

    def fetch_sub(self, i: int, delta: int = 1) -> int:
        return self.fetch_add(i, -delta)

    def load(self, i: int) -> int:
        return self._data[i]

    def snapshot(self) -> list[int]:
        return list(self._data)


_EMPTY = None


class NonBlockingReorderer:
    """Bounded circular reorder buffer with a try-lock exit section.

    ``next`` is only written by the flag holder, so a plain attribute store
    suffices; readers outside the exit section see either the old or the new
    value, which is all the entry condition needs.
    """

    __slots__ = ("_next", "_capacity", "_mask", "_slots", "_flag", "_sink")

    def __init__(self, capacity: int, sink, start: int = 1) -> None:
        if capacity < 1 or capacity & (capacity - 1):
            raise ValueError(f"capacity must be a power of two, got {capacity}")
        if start < 1:
            raise ValueError("start serial must be >= 1")
        self._capacity = capacity
        self._mask = capacity - 1
        self._slots = [_EMPTY] * capacity
        self._next = start
        self._flag = threading.Lock()
        self._sink = sink

    @property
    def capacity(self) -> int:
        return self._capacity

    @property
    def next(self) -> int:
        return self._next

    def slot(self, i: int):
        return self._slots[i & self._mask]

    def flag_test_and_set(self) -> bool:
        return not self._flag.acquire(False)

    def flag_clear(self) -> None:
        self._flag.release()

    def try_add(self, unit) -> bool:
        t = unit.serial
        n = self._next
        if n <= t < n + self._capacity:
            self._slots[t & self._mask] = unit
            return True
        return False

    def send_pending(self) -> int:
        slots = self._slots
        mask = self._mask
        flag = self._flag
        sink = self._sink
        emitted = 0
        while True:
            if not flag.acquire(False):
                return emitted
            try:
                while True:
                    n = self._next
                    i = n & mask
                    unit = slots[i]
                    if unit is _EMPTY:
                        flag.release()
                        break
                    sink(unit)
                    slots[i] = _EMPTY
                    self._next = n + 1
                    emitted += 1
            except BaseException:
                if flag.locked():
                    flag.release()
                raise
            # re-check: a unit may have landed after the scan but before release
            if slots[i] is _EMPTY:
                return emitted

    def send(self, unit) -> bool:
        ok = self.try_add(unit)
        self.send_pending()
        return ok


def hybrid_consume(master, queues, counts: AtomicIntArray, operate, budget: int) -> int:
    processed = 0
    popleft = master.popleft
    fetch_add = counts.fetch_add
    while processed < budget:
        try:
            b = popleft()
        except IndexError:
            break
        if fetch_add(b, 1) == 0:
            q = queues[b]
            while True:
                operate(q.popleft())
                processed += 1
                if fetch_add(b, -1) <= 1:
                    break
    return processed
