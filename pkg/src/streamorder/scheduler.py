"""Central scheduler: which operator an idle worker takes next, and for how
many tuples.

Heuristics (all consider only schedulable operators, ties go to the lowest
index):

* ``qst`` - earliest operator whose output worklist is below its threshold,
  thresholds proportional to cumulative selectivity.
* ``lp``  - latest operator in the pipeline.
* ``et``  - largest estimated time to drain the worklist with one more worker.
* ``ct``  - lowest normalized throughput in the current window.
"""

from __future__ import annotations

import math
import threading
import time
from dataclasses import dataclass
from typing import Callable, Sequence

from .core import HEURISTICS, RuntimeConfig, cumulative_selectivities

COLD_COST_US = 10.0
COLD_SELECTIVITY = 1.0


@dataclass
class OpStats:
    I: int = 0
    c: float = COLD_COST_US
    s_sel: float = COLD_SELECTIVITY
    cs: float = 1.0
    w: int = 0
    M: int = 1
    Tw: float = 0.0
    processed: int = 0
    produced: int = 0
    busy_us: float = 0.0


@dataclass(frozen=True)
class Assignment:
    op: int
    max_tuples: int


@dataclass(frozen=True)
class WorkReport:
    processed: int
    produced: int
    busy_us: float


def schedulable(st: OpStats) -> bool:
    return st.w < st.M and st.I > 0


def qst_thresholds(cs: Sequence[float], C: float) -> list[float]:
    total = math.fsum(cs)
    return [C * x / total for x in cs]


def qst_select(stats: Sequence[OpStats], thresholds: Sequence[float]) -> int | None:
    last = len(stats) - 1
    for i, st in enumerate(stats):
        if not schedulable(st):
            continue
        if i == last or stats[i + 1].I < thresholds[i]:
            return i
    return None


def lp_select(stats: Sequence[OpStats]) -> int | None:
    for i in range(len(stats) - 1, -1, -1):
        if schedulable(stats[i]):
            return i
    return None


def et_priority(st: OpStats) -> float:
    if st.w < st.M:
        return st.I * st.c / (st.w + 1)
    return 0.0


def et_select(stats: Sequence[OpStats]) -> int | None:
    best, best_p = None, -1.0
    for i, st in enumerate(stats):
        if not schedulable(st):
            continue
        p = et_priority(st)
        if p > best_p:
            best, best_p = i, p
    return best


def ct_score(st: OpStats, slice_us: float) -> float:
    return (st.Tw + st.w * slice_us) / (st.c * st.cs)


def ct_select(stats: Sequence[OpStats], slice_us: float) -> int | None:
    best, best_s = None, math.inf
    for i, st in enumerate(stats):
        if not schedulable(st):
            continue
        s = ct_score(st, slice_us)
        if s < best_s:
            best, best_s = i, s
    return best


def max_tuples_for(slice_us: float, c: float) -> int:
    return max(1, math.floor(slice_us / c))


class Scheduler:
    """Shared decision structure guarded by one short mutex.

    ``sizes[i]`` reports operator i's current worklist size and is sampled
    under the mutex at each decision.
    """

    def __init__(
        self,
        sizes: Sequence[Callable[[], int]],
        max_parallelism: Sequence[int],
        config: RuntimeConfig,
        clock: Callable[[], float] = time.monotonic,
    ) -> None:
        if len(sizes) != len(max_parallelism) or not sizes:
            raise ValueError("sizes and max_parallelism must be non-empty and aligned")
        self.config = config
        self.sizes = list(sizes)
        self.stats = [OpStats(M=m) for m in max_parallelism]
        self._lock = threading.Lock()
        self._clock = clock
        self._window_start = clock()
        self._thresholds = self._recompute_cs()
        self.decisions = 0
        self.idle_decisions = 0

    def _recompute_cs(self) -> list[float]:
        cs = cumulative_selectivities([max(st.s_sel, 1e-9) for st in self.stats])
        for st, x in zip(self.stats, cs):
            st.cs = x
        self._thresholds = qst_thresholds(cs, self.config.qst_capacity)
        return self._thresholds

    def _maybe_reset_window(self) -> None:
        now = self._clock()
        if (now - self._window_start) * 1e6 >= self.config.ct_window_us:
            for st in self.stats:
                st.Tw = 0.0
            self._window_start = now

    def select(self, heuristic: str) -> int | None:
        """Pick an operator on the current snapshot (caller holds the lock)."""
        stats = self.stats
        if heuristic == "ct":
            return ct_select(stats, self.config.time_slice_us)
        if heuristic == "lp":
            return lp_select(stats)
        if heuristic == "et":
            return et_select(stats)
        if heuristic == "qst":
            return qst_select(stats, self._thresholds)
        raise ValueError(f"unknown heuristic {heuristic!r}; expected one of {HEURISTICS}")

    def next_assignment(self, worker_id: int, heuristic: str | None = None) -> Assignment | None:
        heuristic = heuristic or self.config.heuristic
        with self._lock:
            for st, size in zip(self.stats, self.sizes):
                st.I = size()
            if heuristic == "ct":
                self._maybe_reset_window()
            i = self.select(heuristic)
            self.decisions += 1
            if i is None:
                self.idle_decisions += 1
                return None
            st = self.stats[i]
            st.w += 1
            assert st.w <= st.M, f"operator {i} over-assigned: w={st.w} M={st.M}"
            return Assignment(i, max_tuples_for(self.config.time_slice_us, st.c))

    def report_completion(self, worker_id: int, op: int, report: WorkReport) -> None:
        alpha = self.config.stats_ewma_alpha
        with self._lock:
            st = self.stats[op]
            st.w -= 1
            st.Tw += report.busy_us
            st.busy_us += report.busy_us
            st.processed += report.processed
            st.produced += report.produced
            if report.processed > 0:
                sample_c = max(report.busy_us / report.processed, 1e-3)
                st.c = alpha * sample_c + (1 - alpha) * st.c
                sample_s = report.produced / report.processed
                st.s_sel = alpha * sample_s + (1 - alpha) * st.s_sel
                self._recompute_cs()

    def snapshot(self) -> list[OpStats]:
        with self._lock:
            return [OpStats(**vars(st)) for st in self.stats]
