"""
Dataset Selection
Resolves the configured data source into train/test track lists
"""
from pathlib import Path
from typing import List, Optional

from siamtrack.core.config import RunConfig
from siamtrack.core.errors import DataError
from siamtrack.core.logging import logger
from siamtrack.models.tracking import TrackingSequence
from siamtrack.services.kitti import KittiTrack, load_kitti_tracklets
from siamtrack.services.synthetic import generate_split, load_synthetic_split

# test sequences never share a seed with training sequences
SPLIT_SEED_OFFSET = {"train": 0, "val": 5000, "test": 10000}


def synthetic_split(config: RunConfig, split: str, class_name: Optional[str] = None) -> List[TrackingSequence]:
    """Generated sequences of one split, seeded by the scene seed, the run seed and the split"""
    if split not in SPLIT_SEED_OFFSET:
        raise DataError(f"unknown split {split!r}, expected one of {sorted(SPLIT_SEED_OFFSET)}")
    data = config.data
    count = data.synthetic_train_sequences if split == "train" else data.synthetic_test_sequences
    return generate_split(
        data.synthetic,
        count,
        base_seed=data.synthetic.seed + config.seed + SPLIT_SEED_OFFSET[split],
        class_name=class_name or config.tracker.class_name,
        prefix=f"synthetic-{split}",
    )


def load_tracks(
    config: RunConfig, split: str, class_name: Optional[str] = None, data_dir: Optional[Path] = None
) -> List:
    """
    Tracks of one split

    Args:
        config: Run configuration (data section)
        split: "train", "val" or "test"
        class_name: Class to keep; defaults to the tracker's class
        data_dir: Directory of synthetic sequences written by `synth` (overrides generation)

    Returns:
        TrackingSequence objects (synthetic) or KittiTrack objects (KITTI)
    """
    class_name = class_name or config.tracker.class_name
    data = config.data
    if data_dir is not None:
        split_dir = Path(data_dir) / split
        tracks = load_synthetic_split(split_dir if split_dir.is_dir() else Path(data_dir))
        tracks = [track for track in tracks if track.class_name == class_name]
    elif data.source == "kitti":
        if data.kitti_root is None:
            raise DataError("data.kitti_root must be set for the kitti source")
        sequences = {
            "train": data.train_sequences,
            "val": data.val_sequences,
            "test": data.test_sequences,
        }[split]
        tracks = [KittiTrack(seq, tracklet) for seq, tracklet in load_kitti_tracklets(data.kitti_root, sequences, class_name)]
    else:
        tracks = synthetic_split(config, split, class_name)
    if not tracks:
        raise DataError(f"no {class_name} tracks found for the {split} split")
    logger.info("tracks_loaded", split=split, source=data.source, tracks=len(tracks), class_name=class_name)
    return tracks
