"""Command-line entry point.

Subcommands full | rom | compare run one configuration and write the report
directory (CSV + JSON + PNG figures); selftest runs the oracle battery of
every module and exits nonzero on any failure.
"""

from __future__ import annotations

import argparse
import sys

from .config import RunConfig
from .driver import run
from .errors import PicromError
from .report import write_report
from .sampling import BENCHMARKS


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="picrom",
        description="Structure-preserving PIC and dynamical reduced-basis solver "
                    "for the parametric Vlasov-Poisson equation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_run_command(name, helptext):
        cmd = sub.add_parser(name, help=helptext)
        cmd.add_argument("--config", help="JSON configuration file")
        cmd.add_argument("--benchmark", choices=sorted(BENCHMARKS),
                         help="named benchmark with paper defaults")
        cmd.add_argument("--override", action="append", default=[],
                         metavar="KEY=VALUE", help="config override (repeatable)")
        cmd.add_argument("--workers", type=int, default=None,
                         help="worker threads for parameter batches")
        cmd.add_argument("--output", default=None, help="output directory")
        cmd.add_argument("--no-figures", action="store_true",
                         help="skip PNG rendering, write only delimited output")
        return cmd

    add_run_command("full", "full-order particle-in-cell batch")
    add_run_command("rom", "dynamical reduced-basis run with hyper-reduction")
    add_run_command("compare", "full and reduced runs plus error diagnostics")

    st = sub.add_parser("selftest", help="run the oracle suite of every module")
    st.add_argument("--quiet", action="store_true", help="only print failures")
    return parser


def config_from_args(args) -> RunConfig:
    if args.config and args.benchmark:
        raise PicromError("--config and --benchmark are mutually exclusive")
    if args.config:
        config = RunConfig.from_file(args.config)
    elif args.benchmark:
        config = RunConfig.from_benchmark(args.benchmark)
    else:
        raise PicromError("one of --config or --benchmark is required")
    config.mode = args.command
    if args.override:
        config = config.apply_overrides(args.override)
    if args.workers is not None:
        config.workers = args.workers
    if args.output is not None:
        config.output = args.output
    config.validate()
    return config


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)

    if args.command == "selftest":
        from .selftest import run_selftest
        return run_selftest(verbose=not args.quiet)

    try:
        config = config_from_args(args)
    except (PicromError, OSError, ValueError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2

    outdir = config.output or f"picrom_output/{config.benchmark}_{config.mode}"
    try:
        report = run(config)
    except PicromError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1

    paths = write_report(report, outdir, figures=not args.no_figures)
    for warning in report.warnings:
        print(f"warning: {warning}")
    for key, value in sorted((report.notes or {}).items()):
        print(f"note: {key} = {value}")
    print(f"wrote {len(paths)} files to {outdir}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
