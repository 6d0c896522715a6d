"""streamorder: ordered stream processing on a shared-memory worker pool.

Linear operator pipelines run on a dynamic pool of threads. Outputs of
parallel operators leave in input order through a non-blocking reordering
buffer; partitioned-stateful operators keep per-key order through a hybrid
master/partition queue. Hot kernels come from a compiled extension when it is
built, with a pure-Python fallback (see ``backend_name``).
"""

from ._backend import available as available_backends
from ._backend import default as _default_backend
from .core import (
    FLUSH,
    ConfigError,
    OperatorKind,
    OperatorSpec,
    OutputUnit,
    PipelineSpec,
    RuntimeConfig,
    StreamTuple,
    cumulative_selectivities,
)
from .metrics import Marker, RunMetrics, summarize
from .operators import JitterIdentity, ParametricOperator, identity, make_parametric
from .partition import HybridQueue, PartitionedQueueSet, hash_partitioner, range_partitioner
from .reorder import LockBasedReorderer, NonBlockingReorderer, make_reorderer
from .runtime import Engine, EngineError, RunResult, run
from .scheduler import Scheduler

backend_name: str = _default_backend.BACKEND_NAME

__all__ = [
    "FLUSH",
    "ConfigError",
    "Engine",
    "EngineError",
    "HybridQueue",
    "JitterIdentity",
    "LockBasedReorderer",
    "Marker",
    "NonBlockingReorderer",
    "OperatorKind",
    "OperatorSpec",
    "OutputUnit",
    "ParametricOperator",
    "PartitionedQueueSet",
    "PipelineSpec",
    "RunMetrics",
    "RunResult",
    "RuntimeConfig",
    "Scheduler",
    "StreamTuple",
    "available_backends",
    "backend_name",
    "cumulative_selectivities",
    "hash_partitioner",
    "identity",
    "make_parametric",
    "make_reorderer",
    "range_partitioner",
    "run",
    "summarize",
]
