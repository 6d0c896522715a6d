"""Query shapes emulated with parametric operators.

Each stage is an operator-kind letter (SL stateless, PS partitioned-stateful,
SF stateful) plus a selectivity. The selectivities below are emulation
parameters chosen so that every shape keeps a non-trivial egress stream; they
are not derived from any real query logic.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

from ..core import ConfigError, OperatorKind, PipelineSpec
from ..operators import make_parametric

KIND_LETTERS = {
    "SL": OperatorKind.STATELESS,
    "SF": OperatorKind.STATEFUL,
    "PS": OperatorKind.PARTITIONED,
}


@dataclass(frozen=True)
class Stage:
    kind: str
    selectivity: float = 1.0
    cost_us: float | None = None  # None: take the knob default

    def __post_init__(self) -> None:
        if self.kind not in KIND_LETTERS:
            raise ConfigError(f"unknown stage kind {self.kind!r}")
        if self.selectivity <= 0:
            raise ConfigError("stage selectivity must be positive")


@dataclass(frozen=True)
class QueryDef:
    id: str
    stages: tuple[Stage, ...]

    @property
    def shape(self) -> tuple[str, ...]:
        return tuple(s.kind for s in self.stages)


def _q(id_: str, *stages: tuple[str, float]) -> QueryDef:
    return QueryDef(id_, tuple(Stage(k, s) for k, s in stages))


QUERIES: dict[str, QueryDef] = {
    "Q1": _q("Q1", ("SL", 1), ("PS", 2), ("PS", 0.5), ("SF", 0.1)),
    "Q2": _q("Q2", ("SL", 1), ("PS", 50), ("SL", 0.1), ("PS", 1), ("SF", 0.1)),
    "Q3": _q("Q3", ("SL", 0.5), ("PS", 1), ("PS", 0.2)),
    "Q4": _q("Q4", ("SL", 1), ("PS", 0.5), ("SL", 1), ("SF", 0.1)),
    "Q15": _q("Q15", ("SL", 1), ("SL", 0.5), ("PS", 1)),
    "micro": _q("micro", ("SL", 1)),
}
QUERY_IDS = tuple(QUERIES)


@dataclass(frozen=True)
class QueryKnobs:
    cost_us: float = 100.0
    selectivity: float | None = None  # overrides every stage when set
    tuple_size: int = 64
    state_size: int = 16
    partitions: int = 100
    key_space: int = 1000
    partitioning: str = "hash"
    seed: int = 0
    calibrate: bool = True
    stages: tuple[Stage, ...] | None = field(default=None)  # replaces the query's chain


def get_query(query_id: str) -> QueryDef:
    try:
        return QUERIES[query_id]
    except KeyError:
        raise ConfigError(f"unknown query {query_id!r}; expected one of {QUERY_IDS}") from None


def micro(kind: str = "SL", selectivity: float = 1.0) -> QueryDef:
    return QueryDef("micro", (Stage(kind, selectivity),))


def build_query(qdef: QueryDef | str, knobs: QueryKnobs | None = None) -> PipelineSpec:
    """Assemble the parametric operator chain for ``qdef``."""
    if isinstance(qdef, str):
        qdef = get_query(qdef)
    knobs = knobs or QueryKnobs()
    stages: Sequence[Stage] = knobs.stages if knobs.stages is not None else qdef.stages
    if knobs.selectivity is not None:
        stages = [replace(s, selectivity=knobs.selectivity) for s in stages]
    ops = []
    for i, st in enumerate(stages):
        ops.append(
            make_parametric(
                KIND_LETTERS[st.kind],
                st.cost_us if st.cost_us is not None else knobs.cost_us,
                st.selectivity,
                tuple_size=knobs.tuple_size,
                state_size=knobs.state_size,
                partitions=knobs.partitions,
                key_space=knobs.key_space,
                partitioning=knobs.partitioning,
                seed=knobs.seed * 1000 + i,
                name=f"{qdef.id}.{i}.{st.kind}",
                calibrate=knobs.calibrate,
            )
        )
    return PipelineSpec(tuple(ops), name=qdef.id)
