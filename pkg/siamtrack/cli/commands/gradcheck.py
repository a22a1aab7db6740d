"""
gradcheck: finite-difference verification of every trainable component
"""
import argparse

import pandas as pd

from siamtrack.cli.dependencies import add_common_arguments, build_config, prepare_output
from siamtrack.core.errors import NumericError
from siamtrack.core.logging import logger
from siamtrack.services.gradcheck import run_suite


def register(subparsers):
    parser = subparsers.add_parser("gradcheck", help="Gradient checks at float64")
    add_common_arguments(parser)
    parser.add_argument("--max-elements", type=int, default=200, help="Checked elements per component")
    parser.set_defaults(handler=run)


def run(args: argparse.Namespace) -> int:
    config = build_config(args)
    out_dir = prepare_output(args, config, "gradcheck")
    rows = []
    for result, tolerance in run_suite(seed=config.seed, max_elements=args.max_elements):
        rows.append(
            {
                "component": result.name,
                "max_relative_error": result.max_relative_error,
                "tolerance": tolerance,
                "checked": result.checked,
                "skipped": result.skipped,
                "worst": result.worst,
                "passed": result.passed(tolerance),
            }
        )
    table = pd.DataFrame(rows)
    table.to_csv(out_dir / "gradcheck.csv", index=False)
    print(table.to_string(index=False, float_format=lambda value: f"{value:.2e}"))

    failed = table.loc[~table["passed"], "component"].tolist()
    if failed:
        logger.error("gradient_check_failed", components=failed)
        raise NumericError(f"gradient check failed for {', '.join(failed)}")
    logger.info("gradient_check_passed", components=len(table))
    return 0
