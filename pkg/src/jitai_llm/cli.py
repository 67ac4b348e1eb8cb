"""Command-line entry point: ``jitai-llm run --scenario FILE``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .exceptions import ConfigurationError, ParameterError
from .harness import emit_plots, load_result, load_scenario, run_sweep


def build_parser():
    parser = argparse.ArgumentParser(
        prog="jitai-llm",
        description="LLM-filtered Thompson Sampling on the StepCountJITAI simulator.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a scenario sweep and write CSVs and plots")
    run.add_argument("--scenario", required=True, help="YAML or JSON scenario file")
    run.add_argument("--seed-base", type=int, default=0, help="offset added to every seed")
    run.add_argument("--out", default=None, help="output directory (overrides the scenario)")
    run.add_argument("--live-llm", action="store_true",
                     help="query the configured chat endpoint instead of the mock oracle")
    run.add_argument("--api-key-env", default=None,
                     help="environment variable holding the API key")
    run.add_argument("--jobs", type=int, default=None, help="worker processes")
    run.add_argument("--no-plots", action="store_true")
    run.add_argument("-v", "--verbose", action="store_true")

    plot = sub.add_parser("plot", help="regenerate plots from the CSVs of a finished run")
    plot.add_argument("--out", required=True, help="directory holding summary.csv")
    plot.add_argument("-v", "--verbose", action="store_true")
    return parser


def _run(args):
    spec = load_scenario(
        args.scenario,
        seed_base=args.seed_base,
        output_dir=args.out,
        live_llm=args.live_llm,
        api_key_env=args.api_key_env,
    )
    if args.jobs is not None:
        from dataclasses import replace

        spec = replace(spec, n_jobs=args.jobs)
    result = run_sweep(spec)
    if not args.no_plots:
        emit_plots(result, spec.output_dir / "plots")
    print(result.summary_csv(), end="")
    return 0


def _plot(args):
    out = Path(args.out)
    for path in emit_plots(load_result(out), out / "plots"):
        print(path)
    return 0


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return _run(args) if args.command == "run" else _plot(args)
    except (ConfigurationError, ParameterError) as exc:
        print(f"jitai-llm: configuration error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"jitai-llm: I/O error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
