"""
Command-Line Application
Siamese point-cloud tracking: data generation, training, tracking, evaluation and checks
"""
import argparse
import sys
import time
from typing import List, Optional

from siamtrack.cli.commands import evaluate, gradcheck, sweep, synth, track, train
from siamtrack.core.config import settings
from siamtrack.core.errors import SiamTrackError
from siamtrack.core.logging import logger, setup_logging

COMMANDS = (synth, train, track, evaluate, sweep, gradcheck)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="siamtrack",
        description="Single-object tracking in LIDAR point clouds with a Siamese region proposal network",
    )
    parser.add_argument("--log-level", default=None, help="Overrides LOG_LEVEL")
    subparsers = parser.add_subparsers(dest="command", required=True)

    # Register commands
    for command in COMMANDS:
        command.register(subparsers)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    setup_logging(args.log_level)
    logger.info("command_started", command=args.command, environment=settings.ENVIRONMENT)

    start_time = time.time()
    try:
        code = args.handler(args)
    except SiamTrackError as e:
        logger.error("command_failed", command=args.command, exit_code=e.exit_code, exc_info=True)
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code
    except Exception as e:
        logger.error(f"Unexpected exception: {e}", exc_info=True)
        print(f"unexpected error: {type(e).__name__}: {e}", file=sys.stderr)
        return 1

    logger.info("command_completed", command=args.command, seconds=time.time() - start_time)
    return code


if __name__ == "__main__":
    sys.exit(main())
