"""Exit criteria. Each test records one PASS/FAIL/WARN line, printed in the
terminal summary (see conftest.py) and immediately when run with ``-s``."""

import math
import random
import statistics
import time
import warnings
from collections import defaultdict
from fractions import Fraction

import psutil
import pytest

from streamorder import _backend
from streamorder.bench.experiments import ExperimentParams, run_experiment
from streamorder.bench.queries import QueryKnobs, build_query
from streamorder.bench.workload import gen_uniform_keys, gen_zipf_keys, payloads
from streamorder.core import (
    OperatorKind,
    OperatorSpec,
    OutputUnit,
    PipelineSpec,
    RuntimeConfig,
)
from streamorder.operators import JitterIdentity
from streamorder.reorder import LockBasedReorderer, NonBlockingReorderer
from streamorder.runtime import Engine, RunState, run
from streamorder.scheduler import OpStats, ct_score, et_priority, qst_thresholds

pytestmark = [pytest.mark.acceptance, pytest.mark.slow]

RESULTS: list[str] = []


def report(number, ok, detail, warn_only=False):
    status = "PASS" if ok else ("WARN" if warn_only else "FAIL")
    line = f"criterion {number}: {status} - {detail}"
    RESULTS.append(line)
    print("\n" + line)
    if not ok and warn_only:
        warnings.warn(line)
    elif not ok:
        pytest.fail(line)


# -- 1. ordering under concurrency ---------------------------------------------------


def test_c1_ordering_stress():
    n, reps = 10**6, 50
    expected = list(range(1, n + 1))
    bad = []
    t0 = time.monotonic()
    for seed in range(reps):
        pipe = PipelineSpec((OperatorSpec(OperatorKind.STATELESS, JitterIdentity(seed)),))
        res = run(pipe, RuntimeConfig(worker_count=8), range(1, n + 1), markers=False)
        if res.egress != expected:
            bad.append(seed)
    elapsed = time.monotonic() - t0
    report(1, not bad, f"{reps} runs x {n} tuples, 8 workers, out-of-order runs: "
                       f"{bad or 'none'} ({elapsed:.0f} s)")


# -- 2. per-key order through the hybrid queue ------------------------------------------


def test_c2_hybrid_queue_stress():
    n, reps, keys = 10**5, 50, 16
    failures = []
    t0 = time.monotonic()
    for rep in range(reps):
        key_of = gen_zipf_keys(keys, n, seed=rep).tolist()
        busy = [False] * keys
        seen = defaultdict(list)
        violations = []

        def process(t, busy=busy, seen=seen, violations=violations):
            k = t.key
            if busy[k]:
                violations.append(t.serial)
            busy[k] = True
            seen[k].append(t.serial)
            busy[k] = False
            return (t.payload,)

        spec = OperatorSpec(OperatorKind.PARTITIONED, process,
                            key_selector=key_of.__getitem__, partitioner=int,
                            partitions=keys)
        res = run(PipelineSpec((spec,)), RuntimeConfig(worker_count=8), range(n),
                  markers=False)
        arrival = defaultdict(list)
        for i, k in enumerate(key_of, start=1):
            arrival[k].append(i)
        if violations:
            failures.append(f"rep {rep}: busy flag violated {len(violations)}x")
        if dict(seen) != dict(arrival):
            failures.append(f"rep {rep}: per-key order or count differs")
        if res.egress != list(range(n)):
            failures.append(f"rep {rep}: egress not exactly-once in order")
    elapsed = time.monotonic() - t0
    report(2, not failures, f"{reps} runs x {n} tuples, 16 Zipf keys, 8 workers: "
                            f"{failures[:3] or 'per-key FIFO, exactly-once, no overlap'} "
                            f"({elapsed:.0f} s)")


# -- 3. sequential equivalence -----------------------------------------------------------


def test_c3_sequential_equivalence():
    n = 10**4
    data = list(payloads(gen_uniform_keys(1000, n, seed=3)))
    knobs = QueryKnobs(cost_us=1, calibrate=False, partitions=64)
    mismatches, runs = [], 0
    t0 = time.monotonic()
    for qid in ("Q1", "Q2", "Q3", "Q4", "Q15"):
        ref = run(build_query(qid, knobs), RuntimeConfig(worker_count=1), data,
                  markers=False).egress
        for heuristic in ("qst", "lp", "et", "ct"):
            for workers in (1, 2, 4, 8):
                cfg = RuntimeConfig(worker_count=workers, heuristic=heuristic)
                got = run(build_query(qid, knobs), cfg, data).egress
                runs += 1
                if got != ref:
                    mismatches.append((qid, heuristic, workers))
    elapsed = time.monotonic() - t0
    report(3, not mismatches, f"{runs} runs over Q1-Q4, Q15 x 4 heuristics x 1/2/4/8 "
                              f"workers: mismatches {mismatches or 'none'} ({elapsed:.0f} s)")


# -- 4. heuristic arithmetic ---------------------------------------------------------


def _rel_close(a, b):
    return math.isclose(a, b, rel_tol=1e-9, abs_tol=1e-300)


def test_c4_heuristic_math():
    rng = random.Random(4)
    bad = []
    for i in range(1000):
        # QST: exact rational oracle
        cs = [rng.uniform(1e-3, 1e3) for _ in range(rng.randint(1, 10))]
        C = rng.uniform(1, 1e6)
        total = sum(Fraction(x) for x in cs)
        oracle = [float(Fraction(C) * Fraction(x) / total) for x in cs]
        got = qst_thresholds(cs, C)
        if not all(_rel_close(g, o) for g, o in zip(got, oracle)):
            bad.append(("qst", i))
        if not _rel_close(math.fsum(got), C):
            bad.append(("qst-sum", i))

        I, c, M = rng.randint(0, 10**4), rng.uniform(0.1, 1e4), rng.randint(1, 16)
        w = rng.randint(0, M)
        tw, cum, slice_us = rng.uniform(0, 1e6), rng.uniform(1e-3, 1e3), rng.uniform(1, 1e4)
        st = OpStats(I=I, c=c, w=w, M=M, Tw=tw, cs=cum)
        et_oracle = float(Fraction(I) * Fraction(c) / (w + 1)) if w < M else 0.0
        if not _rel_close(et_priority(st), et_oracle):
            bad.append(("et", i))
        ct_oracle = float((Fraction(tw) + w * Fraction(slice_us)) / (Fraction(c) * Fraction(cum)))
        if not _rel_close(ct_score(st, slice_us), ct_oracle):
            bad.append(("ct", i))
    report(4, not bad, f"1000 random inputs vs rational oracles at rel 1e-9: "
                       f"{bad[:5] or 'all match, sum(T) == C'}")


# -- 5. reorderer equivalence -----------------------------------------------------------


def _drive_nonblocking(r, order):
    """Send ``order``; rejected units wait and are re-offered after each
    accepted send, as a retrying worker would."""
    deferred = []
    for s in order:
        if not r.send(OutputUnit(s, (s,))):
            deferred.append(s)
            continue
        while deferred:
            before = len(deferred)
            deferred = [d for d in deferred if not r.send(OutputUnit(d, (d,)))]
            if len(deferred) == before:
                break
    assert not deferred


def test_c5_reorderer_equivalence():
    rng = random.Random(5)
    scripts = 10**4
    mismatches = []
    backends = _backend.available()
    for i in range(scripts):
        n = rng.randint(0, 80)
        order = list(range(1, n + 1))
        rng.shuffle(order)
        cap = rng.choice([1, 2, 4, 8, 16, 128])
        a = []
        locked = LockBasedReorderer(lambda u: a.append((u.serial, u.outputs)))
        for s in order:
            locked.send(OutputUnit(s, (s,)))
        for be in backends:
            b = []
            nb = NonBlockingReorderer(cap, lambda u, b=b: b.append((u.serial, u.outputs)),
                                      backend=be)
            _drive_nonblocking(nb, order)
            if a != b:
                mismatches.append((i, be))
        if [s for s, _ in a] != list(range(1, n + 1)):
            mismatches.append((i, "locked"))
    report(5, not mismatches, f"{scripts} random scripts, capacities 1-128, backends "
                              f"{'/'.join(backends)}: mismatches {mismatches[:5] or 'none'}")


# -- 6-8. directional performance ---------------------------------------------------------


def physical_cores():
    return psutil.cpu_count(logical=False) or psutil.cpu_count() or 1


def mean_throughput(rows, **match):
    vals = [r.throughput_tps for r in rows if all(getattr(r, k) == v for k, v in match.items())]
    return statistics.fmean(vals)


def test_c6_reorder_scaling():
    reps = 3
    light, heavy = [], []
    for rep in range(reps):
        light += run_experiment("reorder-scaling", ExperimentParams(
            workers=[8], costs_us=[10.0], tuples=20_000, seed=rep))
        heavy += run_experiment("reorder-selectivity", ExperimentParams(workers=[8], seed=rep))
    light_ratio = (mean_throughput(light, scheme="nonblocking")
                   / mean_throughput(light, scheme="locked"))
    heavy_ratio = (mean_throughput(heavy, scheme="nonblocking")
                   / mean_throughput(heavy, scheme="locked"))
    cores = physical_cores()
    ok = light_ratio >= 0.95 and heavy_ratio >= 1.10
    report(6, ok, f"non-blocking/lock-based throughput at 8 workers: 10 us op "
                  f"{light_ratio:.3f} (need >= 0.95), selectivity-50 pipeline "
                  f"{heavy_ratio:.3f} (need >= 1.10); {cores} physical core(s)",
           warn_only=cores < 4)


def test_c7_skew_resilience():
    reps = 3
    rows = []
    for rep in range(reps):
        rows += run_experiment("skew", ExperimentParams(
            workers=[8], sigmas=[0.05, 0.2, 1.0], tuples=10_000, seed=rep))

    def ratio(scheme):
        return (mean_throughput(rows, scheme=scheme, sigma=0.05)
                / mean_throughput(rows, scheme=scheme, sigma=1.0))

    hybrid, partitioned = ratio("hybrid"), ratio("partitioned")
    report(7, hybrid > partitioned,
           f"throughput(sigma 0.05)/throughput(sigma 1.0) at 8 workers, mean of {reps}: "
           f"hybrid {hybrid:.3f} vs partitioned {partitioned:.3f}")


def test_c8_partition_latency():
    reps = 3
    rows = []
    for rep in range(reps):
        rows += run_experiment("partition-latency", ExperimentParams(
            workers=[8], costs_us=[100.0], tuples=10_000, seed=rep))
    lat = {s: statistics.fmean(r.latency_ms for r in rows if r.scheme == s)
           for s in ("hybrid", "partitioned")}
    ok = lat["hybrid"] <= 5 * 0.1 and lat["hybrid"] < lat["partitioned"]
    report(8, ok, f"mean processing latency at 100 us cost, 8 workers, uniform keys: "
                  f"hybrid {lat['hybrid']:.3f} ms (limit 0.5 ms), "
                  f"partitioned {lat['partitioned']:.3f} ms")


# -- 9. liveness -----------------------------------------------------------------


@pytest.mark.parametrize("heuristic", ["qst", "lp", "et", "ct"])
def test_c9_liveness_soak(heuristic):
    duration = 60.0
    pipe = build_query("Q2")
    # open loop at about half of one core's serial capacity
    per_input_us = 100 + 100 + 50 * 100 + 5 * 100 + 5 * 100
    rate = 0.5 * 1e6 / per_input_us
    data = payloads(gen_uniform_keys(1000, int(rate * duration * 2), seed=9))
    eng = Engine(pipe, RuntimeConfig(worker_count=8, heuristic=heuristic),
                 record_egress=False)
    res = eng.run(data, duration_s=duration, rate=rate, sample_interval_s=1.0)
    counts = [0] + [c for _, c in res.samples[:-1]]
    steps = [b - a for a, b in zip(counts, counts[1:])]
    stalls = [i for i, d in enumerate(steps, start=1) if d <= 0]
    drained = eng.state is RunState.STOPPED and all(
        st.processed == q for st, q in zip(res.op_stats, res.enqueued))
    ok = not stalls and drained and len(steps) >= int(duration) - 1
    report(9, ok, f"{heuristic}: {duration:.0f} s open loop at {rate:.0f} inputs/s, "
                  f"{len(steps)} one-second samples, stalled seconds {stalls or 'none'}, "
                  f"min egress/s {min(steps) if steps else 0}, "
                  f"drain {'clean' if drained else 'INCOMPLETE'}")

