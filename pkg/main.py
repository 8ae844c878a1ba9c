"""Command-line entry point"""
from dotenv import load_dotenv
load_dotenv()

import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional

from pydantic import ValidationError

from app.config import settings
from app.errors import BayesIrError, ConfigError, exit_code_for
from workflow import commands

logging.basicConfig(
    level=getattr(logging, settings.LOG_LEVEL),
    format="%(asctime)s %(levelname)s %(name)s: %(message)s",
)
logger = logging.getLogger("bayes_ir")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration")
    common.add_argument("--set", dest="overrides", action="append", default=[], metavar="PATH=VALUE",
                        help="override a config field, e.g. --set lti.train.steps=500")
    common.add_argument("--seed", type=int, help="root seed")
    common.add_argument("--out", default=settings.OUTPUT_DIR, help="run directory")

    parser = argparse.ArgumentParser(prog="bayes-ir", description="Bayesian impulse-response estimation")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen", parents=[common], help="write synthetic fixtures")
    gen.add_argument("--kind", choices=["lti", "ltv", "ant"])
    gen.add_argument("--pairs", type=int, help="number of ANT receiver pairs")

    fit = sub.add_parser("fit", parents=[common], help="fit the fixtures in --out")
    fit.add_argument("--kind", choices=["lti", "ltv", "ant"])

    compare = sub.add_parser("compare", parents=[common], help="ANT pair-count sweep, MIR against CCF")
    compare.add_argument("--quantize", action="store_true", help="one-bit quantize the records first")
    compare.add_argument("--seeds", type=int, nargs="+", help="seed family of the sweep")

    plotdata = sub.add_parser("plotdata", help="tidy plot series from a result directory")
    plotdata.add_argument("--results", required=True, help="result directory")

    selftest = sub.add_parser("selftest", help="Monte Carlo and finite-difference oracle suites")
    selftest.add_argument("--quick", action="store_true", help="fewer instances and samples")
    return parser


def run(args: argparse.Namespace) -> int:
    if args.command == "selftest":
        checks = commands.cmd_selftest(quick=args.quick)
        for check in checks:
            print(f"{'PASS' if check.passed else 'FAIL'}  {check.name}: {check.detail}")
        return 0 if all(c.passed for c in checks) else 3

    if args.command == "plotdata":
        written = commands.cmd_plotdata(args.results)
    else:
        config = commands.build_config(
            args.command, Path(args.out), args.config, args.overrides,
            kind=getattr(args, "kind", None), seed=args.seed, pairs=getattr(args, "pairs", None))
        if args.command == "gen":
            written = commands.cmd_gen(config)
        elif args.command == "fit":
            written = commands.cmd_fit(config)
        else:
            written = commands.cmd_compare(config, quantize=args.quantize, seeds=args.seeds)
    for name in written:
        print(name)
    return 0


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return run(args)
    except ValidationError as e:
        error = ConfigError(e.errors()[0]["msg"], ".".join(str(p) for p in e.errors()[0]["loc"]))
        logger.error("%s", error)
        return error.exit_code
    except (BayesIrError, OSError) as e:
        logger.error("%s", e)
        return exit_code_for(e)


if __name__ == "__main__":
    sys.exit(main())
