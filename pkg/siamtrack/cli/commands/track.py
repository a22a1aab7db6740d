"""
track: one-pass tracking of a single sequence, written as a per-frame result stream
"""
import argparse
from pathlib import Path

import pandas as pd

from siamtrack.cli.dependencies import add_common_arguments, build_config, load_tracking_network, prepare_output
from siamtrack.core.errors import DataError, TrackingError
from siamtrack.core.logging import logger
from siamtrack.core.metrics import write_metrics
from siamtrack.services.datasets import SPLIT_SEED_OFFSET, load_tracks
from siamtrack.services.evaluation import precision_auc, success_auc, track_and_score
from siamtrack.services.tracker import Tracker


def register(subparsers):
    parser = subparsers.add_parser("track", help="Track one sequence")
    add_common_arguments(parser)
    parser.add_argument("--checkpoint", type=Path, default=None, help="Trained network")
    parser.add_argument("--data-dir", type=Path, default=None, help="Sequences written by synth")
    parser.add_argument("--split", choices=list(SPLIT_SEED_OFFSET), default="test")
    parser.add_argument("--sequence", default=None, help="Track name (e.g. 0019-3); first track when omitted")
    parser.set_defaults(handler=run)


def run(args: argparse.Namespace) -> int:
    config = build_config(args)
    out_dir = prepare_output(args, config, "track")
    tracks = load_tracks(config, args.split, data_dir=args.data_dir)
    if args.sequence is None:
        source = tracks[0]
    else:
        matches = [track for track in tracks if track.name == args.sequence]
        if not matches:
            raise DataError(f"sequence {args.sequence!r} not found in the {args.split} split")
        source = matches[0]

    network, anchor = load_tracking_network(args.checkpoint, config)
    tracker = Tracker(network, config.tracker, seed=config.seed, anchor=anchor)
    outcome = track_and_score(source, tracker)
    if outcome.failed:
        raise TrackingError(outcome.error)

    rows = outcome.frame_rows()
    pd.DataFrame(rows).to_csv(out_dir / "frames.csv", index=False)
    write_metrics(out_dir)
    success = success_auc(outcome.ious_3d, config.eval.success_thresholds)
    precision = precision_auc(outcome.errors_3d, config.eval.precision_thresholds)
    logger.info("sequence_tracked", sequence=source.name, frames=len(rows), success_3d=success, precision_3d=precision)
    print(f"{source.name}: {len(rows)} frames, 3D success {success:.2f}, 3D precision {precision:.2f}")
    return 0
