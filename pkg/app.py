"""
Command-line entry point: simulate grade-of-membership data, fit it with the
spectral estimator, score fits, run benchmark suites and the Gibbs baseline
"""

import argparse
import logging
import sys
import time
import traceback
from typing import List, Optional

from gom_spectral import commands
from gom_spectral.config import GGOM_LOG_LEVEL
from gom_spectral.estimator import DEFAULT_EPSILON
from gom_spectral.exceptions import EXIT_USAGE, GomError, UsageError

# Configure logging
logging.basicConfig(level=GGOM_LOG_LEVEL, format="%(asctime)s %(levelname)s %(message)s")
logger = logging.getLogger(__name__)


def float_list(text: str) -> List[float]:
    """
    Parses "0.2" or "1,1,1" into a list of floats
    """
    try:
        return [float(part) for part in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma separated numbers, got {text!r}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gom-spectral",
        description="Spectral estimation for generalized grade-of-membership models",
    )
    subparsers = parser.add_subparsers(dest="command", required=True)

    simulate = subparsers.add_parser("simulate", help="simulate one dataset from a scenario")
    simulate.add_argument("scenario", help="scenario JSON file")
    simulate.add_argument("--out", required=True, help="output directory")
    simulate.add_argument("--seed", type=int, default=None)
    simulate.add_argument("--replication", type=int, default=0)

    fit = subparsers.add_parser("fit", help="fit the spectral estimator")
    fit.add_argument("data", help="data CSV")
    fit.add_argument("categories", nargs="?", default=None, help="category counts file")
    fit.add_argument("--k", type=int, required=True, help="number of extreme profiles")
    fit.add_argument(
        "--family",
        default="polytomous",
        choices=["polytomous", "bernoulli", "binomial", "poisson"],
    )
    fit.add_argument(
        "--prune", default=commands.DEFAULT_PRUNE, help='"r,q,e" or "none"'
    )
    fit.add_argument("--epsilon", type=float, default=DEFAULT_EPSILON)
    fit.add_argument("--seed", type=int, default=None)
    fit.add_argument(
        "--flat", action="store_true", help="polytomous data is already one-hot encoded"
    )
    fit.add_argument("--out", required=True, help="output directory")

    evaluate = subparsers.add_parser("eval", help="score an estimate against the truth")
    evaluate.add_argument("estimate_dir")
    evaluate.add_argument("truth_dir")
    evaluate.add_argument("--out", default=None, help="output directory")
    evaluate.add_argument(
        "--covariance-columns", default=None, help="a:b, residual covariance columns"
    )
    evaluate.add_argument(
        "--bounds", action="store_true", help="also evaluate the perturbation bounds"
    )

    bench = subparsers.add_parser("bench", help="run a benchmark suite")
    bench.add_argument("suite", help="suite JSON file")
    bench.add_argument("--out", required=True, help="output directory")
    bench.add_argument("--jobs", type=int, default=None)
    bench.add_argument("--seed", type=int, default=None)
    bench.add_argument("--cache", default=None, help="replication cache directory")

    gibbs = subparsers.add_parser("gibbs", help="run the Gibbs sampler baseline")
    gibbs.add_argument("data", help="data CSV of 1-based responses")
    gibbs.add_argument("categories", help="category counts file")
    gibbs.add_argument("--k", type=int, required=True)
    gibbs.add_argument("--burnin", type=int, default=5000)
    gibbs.add_argument("--samples", type=int, default=2000)
    gibbs.add_argument("--alpha", type=float_list, default=None)
    gibbs.add_argument("--beta", type=float_list, default=None)
    gibbs.add_argument("--seed", type=int, default=None)
    gibbs.add_argument("--flat", action="store_true")
    gibbs.add_argument("--out", required=True, help="output directory")
    return parser


def run(args: argparse.Namespace) -> None:
    """
    Dispatches a parsed command line to its command
    """
    if args.command == "simulate":
        commands.cmd_simulate(args.scenario, args.out, args.seed, args.replication)
    elif args.command == "fit":
        if args.k < 1:
            raise UsageError(f"--k must be a positive integer, got {args.k}")
        commands.cmd_fit(
            args.data,
            args.out,
            args.k,
            args.family,
            args.categories,
            args.prune,
            args.epsilon,
            args.seed,
            args.flat,
        )
    elif args.command == "eval":
        commands.cmd_eval(
            args.estimate_dir, args.truth_dir, args.out, args.covariance_columns, args.bounds
        )
    elif args.command == "bench":
        commands.cmd_bench(args.suite, args.out, args.jobs, args.seed, args.cache)
    elif args.command == "gibbs":
        commands.cmd_gibbs(
            args.data,
            args.out,
            args.k,
            args.categories,
            args.burnin,
            args.samples,
            args.alpha,
            args.beta,
            args.seed,
            args.flat,
        )


def main(argv: Optional[List[str]] = None) -> int:
    """
    Runs one command and returns its exit code
    """
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exit_request:
        return int(exit_request.code or 0) and EXIT_USAGE
    start = time.time()
    try:
        run(args)
    except GomError as error:
        logger.critical(f"{args.command} failed: {error}")
        logger.debug(traceback.format_exc())
        return error.exit_code
    logger.info(f"{args.command} completed in {round(time.time() - start, 2)} seconds.")
    return 0


if __name__ == "__main__":
    try:
        sys.exit(main())
    except Exception as e:
        logger.critical(f"An error occurred: {e}")
        traceback.print_exc()
        sys.exit(1)
