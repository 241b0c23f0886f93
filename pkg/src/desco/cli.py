"""Command line: ``desco run`` and ``desco diff``.

Exit codes: 0 success, 1 scenario error, 2 event budget exhausted, 3 traces differ.
"""

from __future__ import annotations

import argparse
import json
import sys
from collections.abc import Sequence

from desco.kernel import SimulationError
from desco.scenario import ScenarioError, load_scenario, run_scenario
from desco.trace import diff_traces, read_trace, write_trace

EXIT_OK = 0
EXIT_SCENARIO = 1
EXIT_BUDGET = 2
EXIT_DIVERGED = 3


def _cmd_run(args: argparse.Namespace) -> int:
    try:
        scenario = load_scenario(args.scenario)
    except ScenarioError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_SCENARIO
    if args.until is not None and args.until < 0:
        print("error: --until must be non-negative", file=sys.stderr)
        return EXIT_SCENARIO
    try:
        result = run_scenario(scenario, args.seed, args.until)
    except SimulationError as err:
        print(f"error: simulation failed: {err}", file=sys.stderr)
        return EXIT_SCENARIO
    if args.trace_out:
        write_trace(args.trace_out, result.trace)
    metrics = dict(result.metrics, trace_digest=result.digest, trace_records=result.trace_count)
    text = json.dumps(metrics, indent=2, sort_keys=True)
    if args.metrics_out:
        with open(args.metrics_out, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    else:
        print(text)
    if result.budget_exhausted:
        print(f"error: event budget of {scenario.max_events} exhausted at t={result.stats.final_time}",
              file=sys.stderr)
        return EXIT_BUDGET
    return EXIT_OK


def _cmd_diff(args: argparse.Namespace) -> int:
    try:
        div = diff_traces(read_trace(args.trace_a), read_trace(args.trace_b))
    except (OSError, ValueError, KeyError) as err:
        print(f"error: cannot read traces: {err}", file=sys.stderr)
        return EXIT_SCENARIO
    if div is None:
        print("traces are equal")
        return EXIT_OK
    print(div.describe())
    return EXIT_DIVERGED


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="desco", description="Deterministic network simulation scenarios.")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a scenario file")
    run.add_argument("scenario")
    run.add_argument("--seed", type=int, default=None, help="scenario-level randomness (default: the file's seed)")
    run.add_argument("--until", type=int, default=None, metavar="TICKS", help="stop the clock at this tick")
    run.add_argument("--trace-out", metavar="PATH", help="write trace records, one JSON object per line")
    run.add_argument("--metrics-out", metavar="PATH", help="write metrics JSON here instead of stdout")
    run.set_defaults(func=_cmd_run)

    diff = sub.add_parser("diff", help="report the first differing record of two traces")
    diff.add_argument("trace_a")
    diff.add_argument("trace_b")
    diff.set_defaults(func=_cmd_diff)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
