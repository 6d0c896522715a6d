"""Experiment drivers. Every measured run is preceded by (or reuses) a
single-worker reference run over the same input, and its egress must match
that reference byte for byte before its numbers are recorded."""

from __future__ import annotations

import hashlib
import itertools
import logging
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

from ..core import HEURISTICS, PARTITION_SCHEMES, REORDER_SCHEMES, ConfigError, RuntimeConfig
from ..core import cumulative_selectivities
from ..runtime import run
from .queries import QUERY_IDS, QueryDef, QueryKnobs, Stage, build_query, get_query, micro
from .workload import SkewConfig, gen_gaussian_keys, gen_uniform_keys, payloads

log = logging.getLogger(__name__)

EXPERIMENTS = (
    "heuristics",
    "reorder-scaling",
    "reorder-selectivity",
    "skew",
    "partition-latency",
    "queries",
)
COLUMNS = (
    "experiment",
    "query",
    "heuristic",
    "workers",
    "scheme",
    "sigma",
    "cost_us",
    "throughput_tps",
    "latency_ms",
)


class CorrectnessGateError(RuntimeError):
    """A run's egress differed from its single-worker reference."""


@dataclass
class ExperimentParams:
    """Parameter matrix for one experiment. ``None`` lists take the
    experiment's defaults (see ``DEFAULTS``)."""

    queries: Sequence[str] | None = None
    heuristics: Sequence[str] | None = None
    workers: Sequence[int] | None = None
    schemes: Sequence[str] | None = None
    reorders: Sequence[str] | None = None
    sigmas: Sequence[float] | None = None
    costs_us: Sequence[float] | None = None
    selectivity: float | None = None
    partitions: int = 100
    tuples: int = 5000
    seed: int = 0
    slice_us: float = 1000.0
    buffer_capacity: int = 1024
    key_space: int = 1000
    marker_count: int = 50
    time_budget_s: float = 5.0  # caps tuples per run by estimated serial cost; 0 disables
    backend: str | None = None
    switch_interval_us: float | None = None
    timeout_s: float | None = None
    calibrate: bool = True


DEFAULTS: dict[str, dict] = {
    "heuristics": dict(queries=["Q1"], heuristics=list(HEURISTICS), workers=[1, 2, 4, 8],
                       schemes=["hybrid"], reorders=["nonblocking"], costs_us=[100.0]),
    "reorder-scaling": dict(queries=["micro"], heuristics=["ct"], workers=[1, 2, 4, 8],
                            schemes=["hybrid"], reorders=list(REORDER_SCHEMES), costs_us=[10.0]),
    "reorder-selectivity": dict(queries=["sel50"], heuristics=["ct"], workers=[1, 2, 4, 8],
                                schemes=["hybrid"], reorders=list(REORDER_SCHEMES),
                                costs_us=[100.0]),
    "skew": dict(queries=["micro-ps"], heuristics=["ct"], workers=[8],
                 schemes=["hybrid", "partitioned"], reorders=["nonblocking"],
                 sigmas=[0.05, 0.2, 1.0], costs_us=[100.0]),
    "partition-latency": dict(queries=["micro-ps"], heuristics=["ct"], workers=[8],
                              schemes=["hybrid", "partitioned"], reorders=["nonblocking"],
                              costs_us=[10.0, 100.0, 1000.0, 10000.0]),
    "queries": dict(queries=[q for q in QUERY_IDS if q != "micro"], heuristics=["ct"],
                    workers=[8], schemes=["hybrid", "partitioned"], reorders=["nonblocking"],
                    costs_us=[100.0]),
}

# pseudo-queries used by the micro experiments
PSEUDO_QUERIES = {
    "micro-ps": micro("PS"),
    "sel50": QueryDef("sel50", (Stage("SL", 50), Stage("PS", 1))),
}


@dataclass(frozen=True)
class RunPoint:
    experiment: str
    query: str
    heuristic: str
    workers: int
    scheme: str
    reorder: str
    sigma: float | None
    cost_us: float


@dataclass
class Row:
    experiment: str
    query: str
    heuristic: str
    workers: int
    scheme: str
    sigma: float | None
    cost_us: float
    throughput_tps: float
    latency_ms: float
    extra: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {
            "experiment": self.experiment,
            "query": self.query,
            "heuristic": self.heuristic,
            "workers": self.workers,
            "scheme": self.scheme,
            "sigma": "" if self.sigma is None else self.sigma,
            "cost_us": self.cost_us,
            "throughput_tps": round(self.throughput_tps, 3),
            "latency_ms": round(self.latency_ms, 6),
        }


def resolve_query(query_id: str) -> QueryDef:
    if query_id in PSEUDO_QUERIES:
        return PSEUDO_QUERIES[query_id]
    return get_query(query_id)


def _resolved(name: str, params: ExperimentParams) -> ExperimentParams:
    if name not in EXPERIMENTS:
        raise ConfigError(f"unknown experiment {name!r}; expected one of {EXPERIMENTS}")
    fill = {k: v for k, v in DEFAULTS[name].items() if getattr(params, k) is None}
    p = replace(params, **fill)
    if p.sigmas is None:
        p = replace(p, sigmas=[None])
    return p


def plan(name: str, params: ExperimentParams) -> list[RunPoint]:
    """Expand and validate the run matrix. Raises ConfigError before any run."""
    p = _resolved(name, params)
    for q in p.queries:
        resolve_query(q)
    for h in p.heuristics:
        if h not in HEURISTICS:
            raise ConfigError(f"unknown heuristic {h!r}")
    for s in p.schemes:
        if s not in PARTITION_SCHEMES:
            raise ConfigError(f"unknown partition scheme {s!r}")
    for r in p.reorders:
        if r not in REORDER_SCHEMES:
            raise ConfigError(f"unknown reorder scheme {r!r}")
    for w in p.workers:
        if w < 1:
            raise ConfigError("workers must be >= 1")
    for s in p.sigmas:
        if s is not None and s <= 0:
            raise ConfigError("sigma must be positive")
    for c in p.costs_us:
        if c <= 0:
            raise ConfigError("cost_us must be positive")
    if p.selectivity is not None and p.selectivity <= 0:
        raise ConfigError("selectivity must be positive")
    if p.tuples < 1 or p.partitions < 1 or p.key_space < 1 or p.marker_count < 1:
        raise ConfigError("tuples, partitions, key_space and marker_count must be >= 1")
    if p.time_budget_s < 0:
        raise ConfigError("time_budget_s must be >= 0")
    for w in p.workers:
        _runtime_config(p, "ct", w, "nonblocking", 1).validate()
    if name == "skew" and p.sigmas == [None]:
        raise ConfigError("skew experiment needs at least one sigma")
    return [
        RunPoint(name, q, h, w, s, r, sg, c)
        for q, c, sg, s, r, h, w in itertools.product(
            p.queries, p.costs_us, p.sigmas, p.schemes, p.reorders, p.heuristics, p.workers
        )
    ]


def _runtime_config(p: ExperimentParams, heuristic: str, workers: int, reorder: str,
                    marker_interval: int) -> RuntimeConfig:
    return RuntimeConfig(
        worker_count=workers,
        time_slice_us=p.slice_us,
        buffer_capacity=p.buffer_capacity,
        marker_interval=marker_interval,
        heuristic=heuristic,
        reorder=reorder,
        backend=p.backend,
        switch_interval_us=p.switch_interval_us,
    )


def estimated_cost_per_input_us(qdef: QueryDef, cost_us: float, selectivity: float | None) -> float:
    sels = [selectivity if selectivity is not None else s.selectivity for s in qdef.stages]
    inflow = [1.0] + cumulative_selectivities(sels)[:-1]
    return sum(
        f * (s.cost_us if s.cost_us is not None else cost_us) for f, s in zip(inflow, qdef.stages)
    )


def tuples_for(p: ExperimentParams, qdef: QueryDef, cost_us: float) -> int:
    if p.time_budget_s <= 0:
        return p.tuples
    per_input = estimated_cost_per_input_us(qdef, cost_us, p.selectivity)
    cap = int(p.time_budget_s * 1e6 / per_input)
    return max(min(p.tuples, cap), min(p.tuples, 10 * p.marker_count))


def make_input(p: ExperimentParams, n: int, sigma: float | None) -> list[bytes]:
    if sigma is not None:
        keys = gen_gaussian_keys(SkewConfig(sigma, p.key_space), n, seed=p.seed)
    else:
        keys = gen_uniform_keys(p.key_space, n, seed=p.seed)
    return list(payloads(keys, seed=p.seed))


def egress_digest(egress: Iterable[bytes]) -> tuple[int, str]:
    h = hashlib.sha256()
    n = 0
    for item in egress:
        h.update(len(item).to_bytes(4, "little"))
        h.update(item)
        n += 1
    return n, h.hexdigest()


class _Runner:
    def __init__(self, p: ExperimentParams) -> None:
        self.p = p
        self._refs: dict[tuple, tuple[int, str]] = {}
        self._inputs: dict[tuple, list[bytes]] = {}

    def knobs(self, pt: RunPoint, workers: int, scheme: str) -> QueryKnobs:
        p = self.p
        partitions = workers if scheme == "partitioned" else p.partitions
        return QueryKnobs(
            cost_us=pt.cost_us,
            selectivity=p.selectivity,
            partitions=partitions,
            key_space=p.key_space,
            partitioning="range" if pt.sigma is not None else "hash",
            seed=p.seed,
            calibrate=p.calibrate,
        )

    def _execute(self, pt: RunPoint, workers: int, scheme: str, reorder: str, heuristic: str,
                 data: list[bytes], interval: int):
        pipeline = build_query(resolve_query(pt.query), self.knobs(pt, workers, scheme))
        cfg = _runtime_config(self.p, heuristic, workers, reorder, interval)
        return run(pipeline, cfg, data, scheme=scheme, timeout_s=self.p.timeout_s)

    def measure(self, pt: RunPoint) -> Row:
        qdef = resolve_query(pt.query)
        n = tuples_for(self.p, qdef, pt.cost_us)
        interval = max(1, n // self.p.marker_count)
        ikey = (n, pt.sigma)
        if ikey not in self._inputs:
            self._inputs[ikey] = make_input(self.p, n, pt.sigma)
        data = self._inputs[ikey]

        rkey = (pt.query, pt.cost_us, pt.sigma, n, interval)
        if rkey not in self._refs:
            ref = self._execute(pt, 1, "hybrid", "nonblocking", "lp", data, interval)
            self._refs[rkey] = egress_digest(ref.egress)
        res = self._execute(pt, pt.workers, pt.scheme, pt.reorder, pt.heuristic, data, interval)
        got = egress_digest(res.egress)
        if got != self._refs[rkey]:
            raise CorrectnessGateError(
                f"{pt}: egress {got[0]} items / {got[1][:16]} differs from reference "
                f"{self._refs[rkey][0]} items / {self._refs[rkey][1][:16]}"
            )
        scheme_label = pt.scheme
        if pt.experiment.startswith("reorder"):
            scheme_label = pt.reorder
        elif pt.reorder != "nonblocking":
            scheme_label = f"{pt.scheme}+{pt.reorder}"
        return Row(
            pt.experiment, pt.query, pt.heuristic, pt.workers, scheme_label, pt.sigma,
            pt.cost_us, res.throughput_tps, res.latency_ms,
            extra={"tuples": n, "egress": res.egress_count, "wall_s": res.wall_s,
                   "retries": sum(res.retries)},
        )


def run_experiment(name: str, params: ExperimentParams | None = None) -> list[Row]:
    """Run every point of the experiment's matrix; one row per point."""
    params = params or ExperimentParams()
    points = plan(name, params)
    runner = _Runner(_resolved(name, params))
    rows = []
    for pt in points:
        row = runner.measure(pt)
        log.info("%s", row.as_dict())
        rows.append(row)
    return rows
