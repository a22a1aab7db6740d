"""
CLI Dependencies
Shared flags, effective configuration, output directories and network loading
"""
import argparse
from pathlib import Path
from typing import Any, Dict, Optional, Tuple

from siamtrack.core.config import DEFAULT_ANCHOR_SIZES, PROFILES, RunConfig, TrackerConfig, load_run_config
from siamtrack.core.logging import logger
from siamtrack.services.network import SiameseRPN, load_network


def add_common_arguments(parser: argparse.ArgumentParser):
    """Flags every command accepts"""
    parser.add_argument("--config", type=Path, default=None, help="JSON run configuration")
    parser.add_argument("--seed", type=int, default=None, help="Run seed (overrides the config)")
    parser.add_argument("--out", type=Path, default=None, help="Output directory")
    parser.add_argument("--profile", choices=sorted(PROFILES), default=None, help="Configuration profile")
    parser.add_argument(
        "--class", dest="class_name", choices=list(DEFAULT_ANCHOR_SIZES), default=None, help="Object class"
    )


def build_config(args: argparse.Namespace) -> RunConfig:
    """Defaults, profile, config file and environment, with the explicit flags applied last"""
    overrides: Dict[str, Any] = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.class_name is not None:
        overrides["tracker"] = {"class_name": args.class_name}
    config = load_run_config(args.config, args.profile, overrides)
    logger.info(
        "config_resolved",
        profile=config.profile,
        seed=config.seed,
        class_name=config.tracker.class_name,
        source=config.data.source,
    )
    return config


def prepare_output(args: argparse.Namespace, config: RunConfig, command: str) -> Path:
    """Create the output directory and echo the effective config into it"""
    out_dir = Path(args.out) if args.out is not None else Path("runs") / command
    config.echo(out_dir)
    return out_dir


def tracker_config_for(config: RunConfig, class_name: str) -> TrackerConfig:
    """The configured tracker section retargeted to another class"""
    return TrackerConfig.model_validate({**config.tracker.model_dump(), "class_name": class_name})


def load_tracking_network(
    checkpoint: Optional[Path], config: RunConfig, class_name: Optional[str] = None
) -> Tuple[SiameseRPN, Tuple[float, float, float]]:
    """
    Network and anchor size for tracking

    Args:
        checkpoint: Trained network, or None for freshly initialized weights
        config: Effective configuration
        class_name: Class being tracked; a checkpoint's stored anchor is used only for its own class

    Returns:
        (network in eval mode, anchor (w, h, l))
    """
    class_name = class_name or config.tracker.class_name
    anchor = tracker_config_for(config, class_name).anchor
    if checkpoint is None:
        logger.warning("untrained_network", reason="no checkpoint given")
        network = SiameseRPN(config.network, config.bins)
    else:
        network, meta, _ = load_network(checkpoint)
        stored = meta.get("anchor_size")
        if stored and config.tracker.anchor_size is None and meta.get("class_name", class_name) == class_name:
            anchor = tuple(float(value) for value in stored)
    network.eval()
    return network, anchor
