import csv
import json
import math
import subprocess
import sys

import numpy as np
import pytest

from streamorder.bench import cli, experiments
from streamorder.bench.experiments import (
    COLUMNS,
    CorrectnessGateError,
    ExperimentParams,
    egress_digest,
    estimated_cost_per_input_us,
    plan,
    run_experiment,
    tuples_for,
)
from streamorder.bench.queries import QUERIES, QueryKnobs, build_query, get_query, micro
from streamorder.bench.workload import (
    SkewConfig,
    bucket_shares,
    gen_gaussian_keys,
    gen_uniform_keys,
    gen_zipf_keys,
    payloads,
)
from streamorder.core import ConfigError, OperatorKind
from streamorder.operators import payload_key

SL, PS, SF = OperatorKind.STATELESS, OperatorKind.PARTITIONED, OperatorKind.STATEFUL

# small, uncalibrated runs so the matrix tests stay quick
QUICK = dict(costs_us=[2.0], tuples=600, calibrate=False)


# -- workload ------------------------------------------------------------------


@pytest.mark.parametrize("sigma", [0.01, 0.3, 1.0, 50.0])
def test_gaussian_keys_in_range(sigma):
    keys = gen_gaussian_keys(SkewConfig(sigma, 1000), 20_000, seed=2)
    assert keys.min() >= 0 and keys.max() < 1000


def test_gaussian_wide_is_near_uniform():
    keys = gen_gaussian_keys(SkewConfig(10.0, 1000), 10**5, seed=0)
    assert bucket_shares(keys, 1000, 10).max() < 0.2


def test_gaussian_narrow_is_skewed():
    # with an odd bucket count there is a single bucket straddling the mean
    keys = gen_gaussian_keys(SkewConfig(0.05, 1000), 10**5, seed=0)
    shares = bucket_shares(keys, 1000, 9)
    assert shares[4] > 0.5


def test_gaussian_matches_truncated_normal_cdf():
    # oracle: bucket mass of Normal(0, sigma) conditioned on [-1, 1]
    n, sigma, K, B = 10**5, 0.3, 1000, 10
    keys = gen_gaussian_keys(SkewConfig(sigma, K), n, seed=7)

    def cdf(x):
        return 0.5 * (1.0 + math.erf(x / (sigma * math.sqrt(2.0))))

    edges = [-1.0 + 2.0 * i / B for i in range(B + 1)]
    z = cdf(1.0) - cdf(-1.0)
    expected = [(cdf(b) - cdf(a)) / z for a, b in zip(edges, edges[1:])]
    got = bucket_shares(keys, K, B)
    assert np.allclose(got, expected, atol=0.006)


def test_gaussian_deterministic_under_seed():
    cfg = SkewConfig(0.2)
    a = gen_gaussian_keys(cfg, 1000, seed=5)
    assert np.array_equal(a, gen_gaussian_keys(cfg, 1000, seed=5))
    assert not np.array_equal(a, gen_gaussian_keys(cfg, 1000, seed=6))


def test_skew_config_rejects_nonpositive_sigma():
    with pytest.raises(ValueError):
        SkewConfig(0.0)


def test_zipf_keys_skewed():
    keys = gen_zipf_keys(16, 10**4, seed=0)
    counts = np.bincount(keys, minlength=16)
    assert keys.min() >= 0 and keys.max() < 16
    assert counts[0] > 3 * counts[15]


def test_payload_layout():
    keys = gen_uniform_keys(1000, 10, seed=3)
    ps = list(payloads(keys, tuple_size=64))
    assert all(len(p) == 64 for p in ps)
    assert [payload_key(p, 1000) for p in ps] == keys.tolist()
    assert len(set(ps)) == 10  # index bytes keep equal keys distinct


# -- queries -------------------------------------------------------------------


def kinds(pipe):
    return [op.kind for op in pipe.operators]


@pytest.mark.parametrize(
    "qid, shape",
    [("Q1", [SL, PS, PS, SF]), ("Q2", [SL, PS, SL, PS, SF]), ("Q3", [SL, PS, PS]),
     ("Q4", [SL, PS, SL, SF]), ("Q15", [SL, SL, PS])],
)
def test_query_shapes(qid, shape):
    assert kinds(build_query(qid, QueryKnobs(calibrate=False))) == shape


def test_micro_is_single_operator():
    pipe = build_query(micro("SL"), QueryKnobs(calibrate=False))
    assert kinds(pipe) == [SL]


def test_unknown_query():
    with pytest.raises(ConfigError):
        get_query("Q99")
    with pytest.raises(ConfigError):
        build_query("Q99")


def test_q2_has_session_explosion_stage():
    assert [s.selectivity for s in QUERIES["Q2"].stages][1] == 50


def test_selectivity_override():
    pipe = build_query("Q1", QueryKnobs(selectivity=1.0, calibrate=False))
    assert [op.process.selectivity for op in pipe.operators] == [1, 1, 1, 1]


def test_partitioned_stage_parallelism_follows_partitions():
    pipe = build_query("Q3", QueryKnobs(partitions=7, calibrate=False))
    assert [op.max_parallelism for op in pipe.operators if op.kind is PS] == [7, 7]


# -- experiment planning ---------------------------------------------------------------


def test_heuristics_matrix_cardinality():
    assert len(plan("heuristics", ExperimentParams())) == 16


def test_partition_latency_default_costs():
    pts = plan("partition-latency", ExperimentParams())
    assert sorted({p.cost_us for p in pts}) == [10.0, 100.0, 1000.0, 10000.0]
    assert {p.scheme for p in pts} == {"hybrid", "partitioned"}


@pytest.mark.parametrize(
    "bad",
    [dict(heuristics=["fifo"]), dict(workers=[0]), dict(schemes=["magic"]),
     dict(reorders=["spin"]), dict(sigmas=[-1.0]), dict(costs_us=[0.0]),
     dict(queries=["Q9"]), dict(tuples=0), dict(selectivity=0.0), dict(slice_us=0.0)],
)
def test_invalid_params_rejected(bad):
    with pytest.raises(ConfigError):
        plan("heuristics", ExperimentParams(**bad))


def test_unknown_experiment():
    with pytest.raises(ConfigError):
        plan("nope", ExperimentParams())


def test_time_budget_caps_tuples():
    q = QUERIES["Q1"]
    per_input = estimated_cost_per_input_us(q, 100.0, None)
    # SL1 -> PS2 -> PS0.5 -> SF: inflow 1, 1, 2, 1
    assert per_input == pytest.approx(500.0)
    p = ExperimentParams(tuples=10**6, time_budget_s=1.0)
    assert tuples_for(p, q, 100.0) == 2000
    assert tuples_for(ExperimentParams(tuples=10**6, time_budget_s=0), q, 100.0) == 10**6


def test_egress_digest_length_prefixed():
    assert egress_digest([b"ab", b"c"]) != egress_digest([b"a", b"bc"])
    assert egress_digest([])[0] == 0


# -- running experiments ----------------------------------------------------------


def test_heuristics_experiment_rows():
    rows = run_experiment("heuristics", ExperimentParams(**QUICK))
    assert len(rows) == 16
    assert {(r.heuristic, r.workers) for r in rows} == {
        (h, w) for h in ("qst", "lp", "et", "ct") for w in (1, 2, 4, 8)
    }
    for r in rows:
        assert tuple(r.as_dict()) == COLUMNS
        assert r.throughput_tps > 0 and r.latency_ms > 0


def test_rows_reproducible_in_schema():
    params = ExperimentParams(queries=["Q3"], heuristics=["ct"], workers=[1, 4], **QUICK)
    a = [r.as_dict() for r in run_experiment("queries", params)]
    b = [r.as_dict() for r in run_experiment("queries", params)]
    strip = ("throughput_tps", "latency_ms")
    assert [{k: v for k, v in r.items() if k not in strip} for r in a] == [
        {k: v for k, v in r.items() if k not in strip} for r in b
    ]


def test_skew_rows_carry_sigma():
    params = ExperimentParams(sigmas=[0.1], workers=[2], **QUICK)
    rows = run_experiment("skew", params)
    assert [(r.scheme, r.sigma) for r in rows] == [("hybrid", 0.1), ("partitioned", 0.1)]


def test_reorder_rows_labelled_by_reorderer():
    params = ExperimentParams(workers=[2], **QUICK)
    rows = run_experiment("reorder-scaling", params)
    assert [r.scheme for r in rows] == ["nonblocking", "locked"]


class _Reverse:
    """runtime.run stand-in that scrambles multi-worker egress."""

    def __init__(self, real):
        self.real = real

    def __call__(self, pipeline, cfg, data, **kw):
        res = self.real(pipeline, cfg, data, **kw)
        if cfg.worker_count > 1:
            res.egress.reverse()
        return res


def test_gate_blocks_mismatched_egress(monkeypatch):
    monkeypatch.setattr(experiments, "run", _Reverse(experiments.run))
    with pytest.raises(CorrectnessGateError):
        run_experiment("queries", ExperimentParams(queries=["Q3"], workers=[2], **QUICK))


# -- CLI -------------------------------------------------------------------------


CLI_QUICK = ["--cost-us", "2", "--tuples", "600", "--time-budget-s", "0"]


def test_cli_writes_csv_and_json(tmp_path):
    out, js = tmp_path / "r.csv", tmp_path / "r.json"
    code = cli.main(["--experiment", "queries", "--query", "Q15", "--workers", "1,2",
                     "--scheme", "hybrid", *CLI_QUICK, "--out", str(out), "--json", str(js)])
    assert code == 0
    with open(out) as fh:
        reader = csv.DictReader(fh)
        assert tuple(reader.fieldnames) == COLUMNS
        rows = list(reader)
    assert [r["workers"] for r in rows] == ["1", "2"]
    assert json.loads(js.read_text()) == [
        {**r, "workers": int(r["workers"]), "cost_us": float(r["cost_us"]),
         "throughput_tps": float(r["throughput_tps"]), "latency_ms": float(r["latency_ms"])}
        for r in rows
    ]


def test_cli_header_line(tmp_path, capsys):
    assert cli.main(["--experiment", "queries", "--query", "Q3", "--workers", "1",
                     "--scheme", "hybrid", *CLI_QUICK]) == 0
    first = capsys.readouterr().out.splitlines()[0]
    assert first == "experiment,query,heuristic,workers,scheme,sigma,cost_us,throughput_tps,latency_ms"


def test_cli_config_error_before_any_run(monkeypatch, capsys):
    def no_run(*a, **kw):
        raise AssertionError("a run started")

    monkeypatch.setattr(experiments, "run", no_run)
    code = cli.main(["--experiment", "heuristics", "--heuristic", "ct,fifo"])
    assert code == cli.EXIT_CONFIG
    assert "fifo" in capsys.readouterr().err


def test_cli_gate_failure_exit_code(monkeypatch, capsys):
    monkeypatch.setattr(experiments, "run", _Reverse(experiments.run))
    code = cli.main(["--experiment", "queries", "--query", "Q3", "--workers", "2",
                     "--scheme", "hybrid", *CLI_QUICK])
    assert code == cli.EXIT_GATE
    assert "correctness gate" in capsys.readouterr().err


def test_cli_rejects_unknown_experiment():
    with pytest.raises(SystemExit) as exc:
        cli.main(["--experiment", "everything"])
    assert exc.value.code != 0


def test_module_entry_point():
    proc = subprocess.run(
        [sys.executable, "-m", "streamorder.bench", "--experiment", "heuristics",
         "--workers", "-1"],
        capture_output=True, text=True,
    )
    assert proc.returncode == 3
