"""Benchmark harness: workloads, query shapes, experiment drivers, CLI."""

from .experiments import (
    COLUMNS,
    EXPERIMENTS,
    CorrectnessGateError,
    ExperimentParams,
    Row,
    plan,
    run_experiment,
)
from .queries import QUERIES, QueryDef, QueryKnobs, Stage, build_query, micro
from .workload import SkewConfig, gen_gaussian_keys, gen_uniform_keys, gen_zipf_keys, payloads

__all__ = [
    "COLUMNS",
    "EXPERIMENTS",
    "CorrectnessGateError",
    "ExperimentParams",
    "Row",
    "plan",
    "run_experiment",
    "QUERIES",
    "QueryDef",
    "QueryKnobs",
    "Stage",
    "build_query",
    "micro",
    "SkewConfig",
    "gen_gaussian_keys",
    "gen_uniform_keys",
    "gen_zipf_keys",
    "payloads",
]
