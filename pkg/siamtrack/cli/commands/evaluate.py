"""
eval: one-pass evaluation per class with a frame-weighted mean row
"""
import argparse
from pathlib import Path

from siamtrack.cli.dependencies import (
    add_common_arguments,
    build_config,
    load_tracking_network,
    prepare_output,
    tracker_config_for,
)
from siamtrack.core.config import DEFAULT_ANCHOR_SIZES
from siamtrack.core.metrics import write_metrics
from siamtrack.services.datasets import SPLIT_SEED_OFFSET, load_tracks
from siamtrack.services.evaluation import (
    format_report_table,
    ground_truth_echo_factory,
    mean_report,
    network_tracker_factory,
    run_ope,
    write_report,
)

TRACKERS = ("network", "gt-echo")


def register(subparsers):
    parser = subparsers.add_parser("eval", help="One-pass evaluation")
    add_common_arguments(parser)
    parser.add_argument("--checkpoint", type=Path, default=None, help="Trained network")
    parser.add_argument("--data-dir", type=Path, default=None, help="Sequences written by synth")
    parser.add_argument("--split", choices=list(SPLIT_SEED_OFFSET), default="test")
    parser.add_argument(
        "--classes", nargs="+", choices=list(DEFAULT_ANCHOR_SIZES), default=None, help="Classes to report"
    )
    parser.add_argument(
        "--tracker", choices=TRACKERS, default="network", help="gt-echo answers every frame with its ground truth"
    )
    parser.set_defaults(handler=run)


def run(args: argparse.Namespace) -> int:
    config = build_config(args)
    out_dir = prepare_output(args, config, "eval")
    classes = args.classes or [config.tracker.class_name]

    reports, outcomes = [], []
    for class_name in classes:
        sources = load_tracks(config, args.split, class_name=class_name, data_dir=args.data_dir)
        if args.tracker == "gt-echo":
            factory = ground_truth_echo_factory
        else:
            network, anchor = load_tracking_network(args.checkpoint, config, class_name)
            factory = network_tracker_factory(network, tracker_config_for(config, class_name), anchor)
        report, class_outcomes = run_ope(
            sources, factory, config.eval, seed=config.seed, label=args.tracker, class_name=class_name
        )
        reports.append(report)
        outcomes.extend(class_outcomes)
    if len(reports) > 1:
        reports.append(mean_report(reports))

    write_report(reports, out_dir, outcomes)
    write_metrics(out_dir)
    print(format_report_table(reports))
    return 0
