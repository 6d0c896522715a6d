"""Command-line entry point: ``bench --experiment <name> [options]``.

List-valued options take comma-separated values, e.g. ``--workers 1,2,4,8``.
Rows go to ``--out`` as CSV (stdout when omitted); ``--json`` additionally
writes the same rows as a JSON array.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from typing import Callable, Sequence

from ..core import ConfigError
from .experiments import (
    COLUMNS,
    EXPERIMENTS,
    CorrectnessGateError,
    ExperimentParams,
    run_experiment,
)

EXIT_OK = 0
EXIT_GATE = 2
EXIT_CONFIG = 3


def _list_of(conv: Callable[[str], object]) -> Callable[[str], list]:
    def parse(text: str) -> list:
        try:
            return [conv(v.strip()) for v in text.split(",") if v.strip()]
        except ValueError as exc:
            raise argparse.ArgumentTypeError(str(exc)) from None

    return parse


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="bench", description=__doc__.splitlines()[0])
    ap.add_argument("--experiment", required=True, choices=EXPERIMENTS)
    ap.add_argument("--query", type=_list_of(str), help="query ids (Q1,Q2,Q3,Q4,Q15,micro)")
    ap.add_argument("--heuristic", type=_list_of(str), help="qst, lp, et, ct")
    ap.add_argument("--workers", type=_list_of(int))
    ap.add_argument("--slice-us", type=float, default=1000.0)
    ap.add_argument("--buffer-capacity", type=int, default=1024)
    ap.add_argument("--partitions", type=int, default=100,
                    help="hybrid/shared bucket count; partitioned uses one per worker")
    ap.add_argument("--scheme", type=_list_of(str), help="hybrid, partitioned, shared")
    ap.add_argument("--reorder", type=_list_of(str), help="nonblocking, locked")
    ap.add_argument("--sigma", type=_list_of(float))
    ap.add_argument("--cost-us", type=_list_of(float))
    ap.add_argument("--selectivity", type=float, help="override every stage's selectivity")
    ap.add_argument("--tuples", type=int, default=5000)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--time-budget-s", type=float, default=5.0,
                    help="cap tuples per run by estimated serial work (0 = no cap)")
    ap.add_argument("--backend", choices=("compiled", "python"))
    ap.add_argument("--out", help="CSV output path (default stdout)")
    ap.add_argument("--json", dest="json_out", help="also write rows as JSON")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def params_from_args(args: argparse.Namespace) -> ExperimentParams:
    return ExperimentParams(
        queries=args.query,
        heuristics=args.heuristic,
        workers=args.workers,
        schemes=args.scheme,
        reorders=args.reorder,
        sigmas=args.sigma,
        costs_us=args.cost_us,
        selectivity=args.selectivity,
        partitions=args.partitions,
        tuples=args.tuples,
        seed=args.seed,
        slice_us=args.slice_us,
        buffer_capacity=args.buffer_capacity,
        time_budget_s=args.time_budget_s,
        backend=args.backend,
    )


def write_rows(rows: Sequence[dict], out: str | None, json_out: str | None) -> None:
    if out:
        with open(out, "w", newline="") as fh:
            _write_csv(rows, fh)
    else:
        _write_csv(rows, sys.stdout)
    if json_out:
        with open(json_out, "w") as fh:
            json.dump(list(rows), fh, indent=2)


def _write_csv(rows, fh) -> None:
    w = csv.DictWriter(fh, fieldnames=COLUMNS, lineterminator="\n")
    w.writeheader()
    w.writerows(rows)


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        rows = run_experiment(args.experiment, params_from_args(args))
    except ConfigError as exc:
        print(f"bench: invalid parameters: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CorrectnessGateError as exc:
        print(f"bench: correctness gate failed: {exc}", file=sys.stderr)
        return EXIT_GATE
    write_rows([r.as_dict() for r in rows], args.out, args.json_out)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
