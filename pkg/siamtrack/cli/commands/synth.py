"""
synth: write seeded synthetic tracking sequences to disk
"""
import argparse

from siamtrack.cli.dependencies import add_common_arguments, build_config, prepare_output
from siamtrack.core.logging import logger
from siamtrack.services.datasets import SPLIT_SEED_OFFSET, synthetic_split
from siamtrack.services.synthetic import write_synthetic_sequence


def register(subparsers):
    parser = subparsers.add_parser("synth", help="Generate synthetic sequence files")
    add_common_arguments(parser)
    parser.add_argument(
        "--splits", nargs="+", choices=list(SPLIT_SEED_OFFSET), default=["train", "test"], help="Splits to write"
    )
    parser.set_defaults(handler=run)


def run(args: argparse.Namespace) -> int:
    config = build_config(args)
    out_dir = prepare_output(args, config, "synth")
    written = 0
    for split in args.splits:
        for sequence in synthetic_split(config, split):
            write_synthetic_sequence(sequence, out_dir / split / sequence.name, config.data.synthetic)
            written += 1
        logger.info("split_written", split=split, path=str(out_dir / split))
    print(f"wrote {written} sequences to {out_dir}")
    return 0
