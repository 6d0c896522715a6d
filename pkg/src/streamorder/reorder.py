"""Output reordering: units produced by concurrent workers leave an operator in
strict serial order.

Two schemes share one surface (``send``, ``try_add``, ``send_pending``,
``next``):

* ``NonBlockingReorderer`` - bounded circular buffer plus a try-lock exit
  section. Lives in the kernel backend (compiled or pure Python).
* ``LockBasedReorderer`` - waiting map guarded by one mutex; the baseline.
"""

from __future__ import annotations

import os
import threading
from typing import Any, Callable

from . import _backend

Sink = Callable[[Any], None]

RETRY_HELP_EVERY = 64


def NonBlockingReorderer(capacity: int, sink: Sink, start: int = 1, backend: str | None = None):
    """Build a non-blocking reorderer from the selected kernel backend."""
    return _backend.get(backend).NonBlockingReorderer(capacity, sink, start)


class LockBasedReorderer:
    """Global-lock reorderer. Callers block while another caller drains."""

    def __init__(self, sink: Sink, start: int = 1) -> None:
        if start < 1:
            raise ValueError("start serial must be >= 1")
        self._sink = sink
        self._next = start
        self._waiting: dict[int, Any] = {}
        self._lock = threading.Lock()

    @property
    def next(self) -> int:
        return self._next

    @property
    def waiting(self) -> int:
        return len(self._waiting)

    def send_locked(self, unit) -> None:
        with self._lock:
            if unit.serial == self._next:
                sink = self._sink
                waiting = self._waiting
                sink(unit)
                n = self._next + 1
                while n in waiting:
                    sink(waiting.pop(n))
                    n += 1
                self._next = n
            else:
                self._waiting[unit.serial] = unit

    def send(self, unit) -> bool:
        self.send_locked(unit)
        return True

    def try_add(self, unit) -> bool:
        self.send_locked(unit)
        return True

    def send_pending(self) -> int:
        return 0


def make_reorderer(scheme: str, sink: Sink, capacity: int = 1024, backend: str | None = None):
    if scheme == "nonblocking":
        return NonBlockingReorderer(capacity, sink, backend=backend)
    if scheme == "locked":
        return LockBasedReorderer(sink)
    raise ValueError(f"unknown reorder scheme {scheme!r}")


def send_with_retry(reorderer, unit, abort: Callable[[], bool] | None = None) -> int:
    """Send ``unit``, retrying while the buffer window excludes it.

    Between failed attempts the caller yields the processor; every
    ``RETRY_HELP_EVERY`` consecutive failures it also runs the drain itself.
    Returns the number of failed attempts. ``abort`` is polled at the same
    cadence so a stopping engine can unstick a spinning worker.
    """
    if reorderer.send(unit):
        return 0
    return retry_send(reorderer, unit, abort)


def retry_send(reorderer, unit, abort: Callable[[], bool] | None = None) -> int:
    """Retry loop after a failed first ``send``; kept out of the hot path."""
    failures = 1
    try_add = reorderer.try_add
    while not try_add(unit):
        failures += 1
        os.sched_yield()
        if failures % RETRY_HELP_EVERY == 0:
            reorderer.send_pending()
            if abort is not None and abort():
                raise RetryAborted(unit.serial)
    reorderer.send_pending()
    return failures


class RetryAborted(RuntimeError):
    """Raised out of ``send_with_retry`` when the engine is tearing down."""
