"""
sweep: ablation over one axis (xcorr variant, search margin D or loss weight lambda)
"""
import argparse
from pathlib import Path
from typing import List

from siamtrack.cli.dependencies import add_common_arguments, build_config, load_tracking_network, prepare_output
from siamtrack.core.config import RunConfig
from siamtrack.core.errors import ConfigError
from siamtrack.core.logging import logger
from siamtrack.services.datasets import load_tracks
from siamtrack.services.evaluation import SWEEP_AXES, ablation_sweep
from siamtrack.services.network import SiameseRPN
from siamtrack.services.training import Trainer
from siamtrack.services.xcorr import XCORR_VARIANTS


def register(subparsers):
    parser = subparsers.add_parser("sweep", help="Ablation sweep over one axis")
    add_common_arguments(parser)
    parser.add_argument("--axis", choices=SWEEP_AXES, required=True)
    parser.add_argument("--values", nargs="+", default=None, help="Axis values (all xcorr variants by default)")
    parser.add_argument("--data-dir", type=Path, default=None, help="Sequences written by synth")
    parser.add_argument(
        "--checkpoint", type=Path, default=None, help="Trained network reused by every cell of a D sweep"
    )
    parser.set_defaults(handler=run)


def parse_values(axis: str, values: List[str]) -> List:
    if axis == "xcorr_variant":
        return list(values)
    try:
        return [float(value) for value in values]
    except ValueError as e:
        raise ConfigError(f"{axis} values must be numbers: {e}") from e


def run(args: argparse.Namespace) -> int:
    config = build_config(args)
    out_dir = prepare_output(args, config, "sweep")
    if args.values is None and args.axis != "xcorr_variant":
        raise ConfigError(f"--values is required for the {args.axis} axis")
    values = parse_values(args.axis, args.values or list(XCORR_VARIANTS))
    test_sources = load_tracks(config, "test", data_dir=args.data_dir)
    reuse_checkpoint = args.axis == "D" and args.checkpoint is not None
    train_sources = None if reuse_checkpoint else load_tracks(config, "train", data_dir=args.data_dir)

    def prepare(cell: RunConfig):
        if reuse_checkpoint:
            return load_tracking_network(args.checkpoint, cell)
        # the margin and xcorr variant shape training too, so every other cell trains from scratch
        trainer = Trainer(SiameseRPN(cell.network, cell.bins), cell, train_sources)
        trainer.train()
        return trainer.network, trainer.anchor

    table = ablation_sweep(args.axis, values, config, prepare, test_sources)
    table.to_csv(out_dir / "sweep.csv", index=False)
    logger.info("sweep_completed", axis=args.axis, cells=len(table), path=str(out_dir / "sweep.csv"))
    print(table.reindex(columns=["axis", "value", "success_3d", "precision_3d", "error"]).to_string(index=False))
    return 0
