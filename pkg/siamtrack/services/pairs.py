"""
Training Pair Sampling
Template/search crops from two frames of one track, with foreground labels and box targets
"""
from typing import List, Optional, Protocol, Sequence, Tuple

import numpy as np

from siamtrack.core.config import BinConfig, TrainConfig
from siamtrack.core.logging import logger
from siamtrack.models.dataset import TrainingPair
from siamtrack.models.geometry import Box3D, PointCloud
from siamtrack.services.geometry import crop_by_box, enlarge_box, points_in_box, resample
from siamtrack.services.rpn import encode_direct_targets, encode_targets


class PairSource(Protocol):
    """A track whose frames can be fetched by position"""

    boxes: List[Box3D]

    def __len__(self) -> int:
        ...

    def cloud(self, index: int) -> PointCloud:
        ...


def make_pair(
    template_cloud: PointCloud,
    template_box: Box3D,
    search_cloud: PointCloud,
    search_box: Box3D,
    rng: np.random.Generator,
    config: TrainConfig,
    bins: BinConfig,
    anchor: Sequence[float],
    margin: float,
    input_points: int,
    layout_kind: str = "bin",
) -> Optional[TrainingPair]:
    """
    Build one pair from two known frames; None when either crop is too sparse

    The search area is the search-frame box enlarged by `margin` with its center shifted by a
    uniform horizontal jitter.
    """
    template = crop_by_box(template_cloud, enlarge_box(template_box, config.template_margin))
    jitter = rng.uniform(-config.center_jitter, config.center_jitter, size=2)
    area = enlarge_box(search_box, margin).model_copy(
        update={"cx": search_box.cx + jitter[0], "cy": search_box.cy + jitter[1]}
    )
    search = crop_by_box(search_cloud, area)
    if len(template) < config.min_points or len(search) < config.min_points:
        return None

    template_points = resample(template, input_points, rng).points
    search_points = resample(search, input_points, rng).points
    foreground = points_in_box(search_points, search_box)
    if layout_kind == "direct":
        targets = encode_direct_targets(search_points, search_box, anchor, bins)
    else:
        targets = encode_targets(search_points, search_box, anchor, bins)
    return TrainingPair(
        template=template_points,
        search=search_points,
        gt=search_box,
        foreground=foreground,
        targets=targets,
    )


def _pick_frames(length: int, rng: np.random.Generator, max_gap: Optional[int]) -> Tuple[int, int]:
    first = int(rng.integers(length))
    low = 0 if max_gap is None else max(0, first - max_gap)
    high = length - 1 if max_gap is None else min(length - 1, first + max_gap)
    choices = [index for index in range(low, high + 1) if index != first]
    return first, int(rng.choice(choices))


def sample_training_pair(
    sources: Sequence[PairSource],
    rng: np.random.Generator,
    config: TrainConfig,
    bins: BinConfig,
    anchor: Sequence[float],
    margin: float,
    input_points: int,
    layout_kind: str = "bin",
) -> Optional[TrainingPair]:
    """
    Draw a random same-track pair

    Args:
        sources: Tracks with at least two frames
        rng: Seeded generator; fixes the pair completely
        config: Jitter, template margin, frame gap and retry settings
        bins: Bin geometry of the regression targets
        anchor: (w, h, l) anchor size
        margin: Search-area margin D
        input_points: Resampled cloud size N
        layout_kind: "bin" or "direct" regression targets

    Returns:
        A TrainingPair, or None after `max_pair_retries` degenerate draws
    """
    usable = [source for source in sources if len(source) >= 2]
    if not usable:
        return None
    for _ in range(config.max_pair_retries):
        source = usable[int(rng.integers(len(usable)))]
        first, second = _pick_frames(len(source), rng, config.max_frame_gap)
        pair = make_pair(
            source.cloud(first),
            source.boxes[first],
            source.cloud(second),
            source.boxes[second],
            rng,
            config,
            bins,
            anchor,
            margin,
            input_points,
            layout_kind,
        )
        if pair is not None:
            return pair
    logger.warning("training_pair_skipped", retries=config.max_pair_retries)
    return None
