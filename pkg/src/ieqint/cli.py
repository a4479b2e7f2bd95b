"""Batch command-line interface.

Subcommands: run, reference, converge, bench, scan. Each takes
``--config <path>`` (flat key = value text) plus any number of
``--set key=value`` overrides; ``--output`` directs the CSV to a file
(otherwise it goes to stdout and the human-readable summary moves to
stderr); ``--figure`` additionally renders a matplotlib figure of the same
result.

Exit codes: 0 success, 2 configuration error, 3 divergence (partial CSV is
still written), 4 solver failure.
"""

from __future__ import annotations

import argparse
import sys

from . import harness
from .errors import (
    ConfigError,
    Diverged,
    LinearSolveFailure,
    NoConvergence,
    NotPositiveDefinite,
    SingularUpdate,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DIVERGED = 3
EXIT_SOLVER = 4


def _parser():
    parser = argparse.ArgumentParser(
        prog="ieqint",
        description="Energy-conserving time integration experiments",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, desc in (
        ("run", "step one scheme and emit the energy/probe trace"),
        ("reference", "fine-step explicit reference trajectory"),
        ("converge", "error against a reference over a dt list"),
        ("bench", "median wall times per scheme and dt"),
        ("scan", "stability scan over a dt range"),
    ):
        cmd = sub.add_parser(name, help=desc)
        cmd.add_argument("--config", help="flat key = value configuration file")
        cmd.add_argument(
            "--set",
            dest="overrides",
            action="append",
            default=[],
            metavar="KEY=VALUE",
            help="override one configuration key (repeatable)",
        )
        cmd.add_argument("--output", help="CSV output path (default stdout)")
        cmd.add_argument("--figure", help="also render a figure to this path")
    return parser


def _emit(lines, args, summary_lines=()):
    text_stream = sys.stdout if args.output else sys.stderr
    harness.write_lines(lines, path=args.output, stream=None if args.output else sys.stdout)
    for line in summary_lines:
        print(line, file=text_stream)


def _cmd_run(cfg, args):
    record, summary = harness.run_experiment(cfg)
    _emit(harness.run_csv_lines(record), args, summary.lines())
    if args.figure:
        from . import figures

        figures.save_run_figure(record, args.figure)
    return EXIT_DIVERGED if record.diverged else EXIT_OK


def _cmd_reference(cfg, args):
    result = harness.reference_experiment(cfg)
    _emit(
        harness.reference_csv_lines(result),
        args,
        (f"rows = {result.samples.shape[0]}", f"fine_dt = {result.fine_dt:g}"),
    )
    if args.figure:
        from . import figures

        figures.save_reference_figure(result, args.figure)
    return EXIT_OK


def _cmd_converge(cfg, args):
    result = harness.converge_experiment(cfg)
    _emit(
        harness.converge_csv_lines(result),
        args,
        (f"scheme = {result.scheme}", f"slope = {result.slope:.4f}"),
    )
    if args.figure:
        from . import figures

        figures.save_converge_figure(result, args.figure)
    return EXIT_OK


def _cmd_bench(cfg, args):
    rows = harness.bench_experiment(cfg)
    _emit(harness.bench_csv_lines(rows), args)
    if args.figure:
        from . import figures

        figures.save_bench_figure(rows, args.figure)
    return EXIT_OK


def _cmd_scan(cfg, args):
    rows = harness.scan_experiment(cfg)
    boundary = next((row.dt for row in rows if not row.stable), None)
    notes = [] if boundary is None else [f"first_unstable_dt = {boundary:g}"]
    _emit(harness.scan_csv_lines(rows), args, notes)
    if args.figure:
        from . import figures

        figures.save_scan_figure(rows, args.figure)
    return EXIT_OK


_COMMANDS = {
    "run": _cmd_run,
    "reference": _cmd_reference,
    "converge": _cmd_converge,
    "bench": _cmd_bench,
    "scan": _cmd_scan,
}


def main(argv=None):
    args = _parser().parse_args(argv)
    try:
        cfg = harness.load_config(args.config, args.overrides)
        return _COMMANDS[args.command](cfg, args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Diverged as exc:
        print(f"diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (NoConvergence, LinearSolveFailure, NotPositiveDefinite, SingularUpdate) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
