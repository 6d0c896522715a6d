"""Marker-based throughput and latency measurement.

Markers ride the ordered stream as identity tuples, one every
``marker_interval`` data tuples, and collect three monotonic timestamps.
Only markers ranked in the 20th-80th percentile (by id) are summarized,
which trims start-up and shut-down effects.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

STAGES = ("ingress", "first_processing", "egress")


class Marker:
    __slots__ = ("id", "ingress_ns", "first_processing_ns", "egress_ns")

    def __init__(self, id: int) -> None:
        self.id = id
        self.ingress_ns: int | None = None
        self.first_processing_ns: int | None = None
        self.egress_ns: int | None = None

    @property
    def processing_latency_ns(self) -> int:
        return self.egress_ns - self.first_processing_ns

    @property
    def end_to_end_latency_ns(self) -> int:
        return self.egress_ns - self.ingress_ns

    @property
    def complete(self) -> bool:
        return None not in (self.ingress_ns, self.first_processing_ns, self.egress_ns)

    def __repr__(self) -> str:
        return (
            f"Marker(id={self.id}, ingress={self.ingress_ns}, "
            f"first={self.first_processing_ns}, egress={self.egress_ns})"
        )


def stamp_marker(m: Marker, stage: str, now_ns: int | None = None) -> None:
    """Record the current monotonic time for ``stage``; each stage once."""
    if stage not in STAGES:
        raise ValueError(f"unknown marker stage {stage!r}")
    attr = f"{stage}_ns"
    assert getattr(m, attr) is None, f"marker {m.id} stamped twice at {stage}"
    setattr(m, attr, time.monotonic_ns() if now_ns is None else now_ns)


class TooFewMarkers(ValueError):
    pass


MIN_MARKERS = 5


@dataclass
class RunMetrics:
    throughput_tps: float
    latency_ms: float
    end_to_end_latency_ms: float
    retained: list[Marker] = field(repr=False)
    markers: list[Marker] = field(repr=False)
    busy_share: dict[str, float] = field(default_factory=dict)


def retained_markers(markers: list[Marker]) -> list[Marker]:
    """Markers whose rank r (1-based, by id) satisfies 0.2n < r <= 0.8n."""
    ordered = sorted(markers, key=lambda m: m.id)
    n = len(ordered)
    lo = math.floor(0.2 * n)
    hi = math.floor(0.8 * n)
    return ordered[lo:hi]


def summarize(
    markers: list[Marker],
    tuples_per_marker: int,
    busy_share: dict[str, float] | None = None,
) -> RunMetrics:
    """Mean throughput and processing latency over the retained markers.

    ``tuples_per_marker`` is the number of data tuples between consecutive
    markers at ingress.
    """
    done = [m for m in markers if m.complete]
    if len(done) < MIN_MARKERS:
        raise TooFewMarkers(f"need at least {MIN_MARKERS} completed markers, got {len(done)}")
    kept = retained_markers(done)
    first, last = kept[0], kept[-1]
    span_ns = last.egress_ns - first.egress_ns
    tuples = (last.id - first.id) * tuples_per_marker
    throughput = tuples / (span_ns / 1e9) if span_ns > 0 else math.inf
    latency = sum(m.processing_latency_ns for m in kept) / len(kept) / 1e6
    e2e = sum(m.end_to_end_latency_ns for m in kept) / len(kept) / 1e6
    return RunMetrics(
        throughput_tps=throughput,
        latency_ms=latency,
        end_to_end_latency_ms=e2e,
        retained=kept,
        markers=done,
        busy_share=dict(busy_share or {}),
    )
