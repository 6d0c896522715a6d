"""Compare the compiled kernels against the pure-Python fallback.

    python benchmarks/compare_backends.py [--n 200000] [--repeat 3]

Prints one line per kernel with the best-of-``repeat`` time per operation for
each available backend and the speedup of compiled over Python.
"""

from __future__ import annotations

import argparse
import random
import time

from streamorder import _backend
from streamorder.core import OperatorKind, OperatorSpec, OutputUnit, PipelineSpec, RuntimeConfig
from streamorder.operators import identity
from streamorder.runtime import run


def bench_counter(mod, n: int) -> float:
    c = mod.AtomicCounter(0)
    add = c.fetch_add
    t0 = time.perf_counter()
    for _ in range(n):
        add(1)
    return time.perf_counter() - t0


def bench_reorder_in_order(mod, n: int) -> float:
    out = []
    r = mod.NonBlockingReorderer(1024, out.append)
    units = [OutputUnit(i, ()) for i in range(1, n + 1)]
    send = r.send
    t0 = time.perf_counter()
    for u in units:
        send(u)
    return time.perf_counter() - t0


def bench_reorder_shuffled(mod, n: int, window: int = 64) -> float:
    """Serials arrive shuffled within consecutive blocks of ``window``."""
    out = []
    r = mod.NonBlockingReorderer(1024, out.append)
    rng = random.Random(1)
    serials = []
    for base in range(1, n + 1, window):
        block = list(range(base, min(base + window, n + 1)))
        rng.shuffle(block)
        serials.extend(block)
    units = [OutputUnit(s, ()) for s in serials]
    send = r.send
    t0 = time.perf_counter()
    for u in units:
        send(u)
    elapsed = time.perf_counter() - t0
    assert len(out) == n
    return elapsed


def bench_hybrid_consume(mod, n: int, buckets: int = 100) -> float:
    from collections import deque

    master = deque()
    queues = [deque() for _ in range(buckets)]
    counts = mod.AtomicIntArray(buckets)
    for i in range(n):
        b = i % buckets
        queues[b].append(i)
        master.append(b)
    sink = []
    t0 = time.perf_counter()
    done = 0
    while done < n:
        done += mod.hybrid_consume(master, queues, counts, sink.append, 1024)
    return time.perf_counter() - t0


def bench_engine(mod, n: int, workers: int) -> float:
    pipeline = PipelineSpec((OperatorSpec(OperatorKind.STATELESS, identity),))
    cfg = RuntimeConfig(worker_count=workers, backend=mod.BACKEND_NAME, heuristic="lp")
    res = run(pipeline, cfg, range(n), markers=False, record_egress=False)
    assert res.egress_count == n
    return res.wall_s


KERNELS = [
    ("counter.fetch_add", bench_counter, 1),
    ("reorder.send in-order", bench_reorder_in_order, 1),
    ("reorder.send shuffled", bench_reorder_shuffled, 1),
    ("hybrid_consume", bench_hybrid_consume, 1),
    ("engine 1 worker", lambda m, n: bench_engine(m, n, 1), 10),
    ("engine 4 workers", lambda m, n: bench_engine(m, n, 4), 10),
]


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=200_000)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()

    backends = [_backend.get(name) for name in _backend.available()]
    names = [b.BACKEND_NAME for b in backends]
    print(f"{'kernel':<24}" + "".join(f"{n + ' ns/op':>18}" for n in names) + f"{'speedup':>10}")
    for label, fn, shrink in KERNELS:
        n = max(1000, args.n // shrink)
        per_op = []
        for mod in backends:
            best = min(fn(mod, n) for _ in range(args.repeat))
            per_op.append(best / n * 1e9)
        line = f"{label:<24}" + "".join(f"{v:>18.1f}" for v in per_op)
        if len(per_op) == 2:
            line += f"{per_op[1] / per_op[0]:>9.2f}x"
        print(line)


if __name__ == "__main__":
    main()
