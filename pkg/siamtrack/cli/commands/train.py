"""
train: fit the Siamese RPN on sampled template/search pairs
"""
import argparse
from pathlib import Path

from siamtrack.cli.dependencies import add_common_arguments, build_config, prepare_output
from siamtrack.core.logging import logger
from siamtrack.core.metrics import write_metrics
from siamtrack.services.datasets import load_tracks
from siamtrack.services.network import SiameseRPN, load_network
from siamtrack.services.training import Trainer


def register(subparsers):
    parser = subparsers.add_parser("train", help="Train a tracking network")
    add_common_arguments(parser)
    parser.add_argument("--data-dir", type=Path, default=None, help="Sequences written by synth")
    parser.add_argument("--resume", type=Path, default=None, help="Checkpoint to continue from")
    parser.add_argument("--epochs", type=int, default=None, help="Total epochs (overrides the config)")
    parser.set_defaults(handler=run)


def run(args: argparse.Namespace) -> int:
    config = build_config(args)
    out_dir = prepare_output(args, config, "train")
    sources = load_tracks(config, "train", data_dir=args.data_dir)

    if args.resume is not None:
        network, meta, adam_arrays = load_network(args.resume)
        anchor = meta.get("anchor_size")
        trainer = Trainer(network, config, sources, anchor=anchor, out_dir=out_dir)
        trainer.resume(int(meta.get("epoch", 0)), adam_arrays)
    else:
        network = SiameseRPN(config.network, config.bins)
        trainer = Trainer(network, config, sources, out_dir=out_dir)

    history = trainer.train(args.epochs)
    trainer.write_log()
    checkpoint = trainer.save()
    write_metrics(out_dir)
    if history:
        logger.info("training_finished", epochs=trainer.epoch, first_total=history[0].total, last_total=history[-1].total)
        print(f"epoch {trainer.epoch}: total loss {history[-1].total:.4f} (epoch 1: {history[0].total:.4f})")
    print(f"checkpoint: {checkpoint}")
    return 0
