"""CLI entry point: python3 -m metamed.cli <command>."""
from __future__ import annotations

import argparse
import logging
import sys
from typing import NoReturn, Optional, Sequence

from pydantic import ValidationError

from metamed.config import settings
from metamed.exceptions import EXIT_DATA, EXIT_USAGE, MetamedError

from .commands import handle_estimate, handle_meta, handle_simulate

METHODS = ["qe", "bc", "mln", "luo_wan"]
FORMATS = ["table", "csv", "json", "markdown"]


class _Parser(argparse.ArgumentParser):
    """Usage errors exit with status 1."""

    def error(self, message: str) -> NoReturn:
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="python3 -m metamed.cli",
        description="Mean/SD estimation from quantile summaries and random-effects meta-analysis",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="Debug logging on stderr")
    sub = parser.add_subparsers(dest="command")

    # estimate
    p_est = sub.add_parser("estimate", help="Estimate mean, SD and SEs for one summary")
    p_est.add_argument("--method", default="qe", choices=METHODS, help="Estimator (default: qe)")
    p_est.add_argument("--scenario", type=str.upper, choices=["S1", "S2", "S3"], help="Reporting scenario")
    p_est.add_argument("--min", type=float, default=None, help="Sample minimum")
    p_est.add_argument("--q1", type=float, default=None, help="First quartile")
    p_est.add_argument("--median", type=float, default=None, help="Sample median")
    p_est.add_argument("--q3", type=float, default=None, help="Third quartile")
    p_est.add_argument("--max", type=float, default=None, help="Sample maximum")
    p_est.add_argument("--n", type=int, default=None, help="Sample size")
    p_est.add_argument("--json-input", default=None, help="JSON summary file, or - for stdin")
    p_est.add_argument("--B", type=int, default=settings.bootstrap_b, help="Bootstrap replicates")
    p_est.add_argument("--seed", type=int, default=settings.seed, help="Bootstrap seed")
    p_est.add_argument("--format", default="table", choices=FORMATS, help="Output format")
    p_est.set_defaults(func=handle_estimate)

    # meta
    p_meta = sub.add_parser("meta", help="Screen, estimate and pool a two-group study CSV")
    p_meta.add_argument("csv", help="Study CSV (study_id, outcome, group, n, mean/sd or quantiles)")
    p_meta.add_argument("--method", default="mln", choices=METHODS, help="Estimator for quantile groups (default: mln)")
    p_meta.add_argument(
        "--se", default="both", choices=["naive", "bootstrap", "both"],
        help="SE variant(s) to pool (default: both)",
    )
    p_meta.add_argument("--B", type=int, default=settings.bootstrap_b, help="Bootstrap replicates")
    p_meta.add_argument("--seed", type=int, default=settings.seed, help="Bootstrap seed")
    p_meta.add_argument("--min-n", type=int, default=settings.min_n, help="Minimum group size")
    p_meta.add_argument("--skew-cap", type=float, default=settings.skew_cap, help="Maximum Bowley skewness")
    p_meta.add_argument("--min-studies", type=int, default=settings.min_studies, help="Minimum studies per outcome")
    p_meta.add_argument("--model", default="random", choices=["random", "common"], help="Effect model")
    p_meta.add_argument("--level", type=float, default=0.95, help="Confidence level")
    p_meta.add_argument("--format", default="table", choices=FORMATS, help="Output format")
    p_meta.add_argument("--out", default=None, help="Directory for outcomes/studies/screening CSVs and report JSON")
    p_meta.set_defaults(func=handle_meta)

    # simulate
    p_sim = sub.add_parser("simulate", help="Run simulation cells from a TOML or JSON config")
    p_sim.add_argument("config", help="Simulation config file (.toml or .json)")
    p_sim.add_argument("--out", default="results", help="Output directory (default: results)")
    p_sim.add_argument("--dry-run", action="store_true", help="List planned cells without running them")
    p_sim.add_argument("--format", default="table", choices=["table", "markdown"], help="Summary table format")
    p_sim.set_defaults(func=handle_simulate)

    return parser


def main(argv: Optional[Sequence[str]] = None) -> None:
    parser = build_parser()
    args = parser.parse_args(argv)

    logging.basicConfig(
        level=logging.DEBUG if args.verbose else settings.log_level.upper(),
        format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
        stream=sys.stderr,
    )

    if not args.command:
        parser.print_help()
        sys.exit(EXIT_USAGE)

    try:
        args.func(args)
    except MetamedError as exc:
        print(f"Error: {exc}", file=sys.stderr)
        sys.exit(exc.exit_code)
    except ValidationError as exc:
        problems = "; ".join(e["msg"] for e in exc.errors())
        print(f"Error: invalid input: {problems}", file=sys.stderr)
        sys.exit(EXIT_DATA)
    except OSError as exc:
        print(f"Error: {exc}", file=sys.stderr)
        sys.exit(EXIT_DATA)


if __name__ == "__main__":
    main()
