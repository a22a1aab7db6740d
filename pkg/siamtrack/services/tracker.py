"""
Tracking Driver
Frozen-template initialization and the closed crop -> encode -> correlate -> propose -> select loop
"""
import time
from typing import List, Optional, Protocol, Sequence, Tuple

import numpy as np

from siamtrack.core.config import BinConfig, TrackerConfig
from siamtrack.core.errors import TrackingError
from siamtrack.core.logging import logger
from siamtrack.core.metrics import FALLBACK_FRAMES, STAGE_SECONDS
from siamtrack.models.geometry import Box3D, PointCloud
from siamtrack.models.network import FeatureMap
from siamtrack.models.tracking import FrameResult, TrackerState
from siamtrack.services.geometry import crop_by_box, enlarge_box, resample
from siamtrack.services.rpn import ChannelLayout, decode_proposals, select_and_nms

GOOD_SCORE = 0.5


class SearchOutput(Protocol):
    scores: np.ndarray
    reg: np.ndarray


class TrackingNetwork(Protocol):
    """What the driver needs from a network"""

    input_points: int
    layout: ChannelLayout
    bins: BinConfig

    def encode_template(self, points: np.ndarray) -> FeatureMap:
        ...

    def predict(self, template: FeatureMap, search_points: np.ndarray) -> SearchOutput:
        ...


class Tracker:
    """
    Single-target tracker

    One instance drives one target at a time and owns its sampling generator; run separate
    instances (with separate network copies) for concurrent targets.
    """

    def __init__(
        self,
        network: TrackingNetwork,
        config: Optional[TrackerConfig] = None,
        seed: int = 0,
        anchor: Optional[Sequence[float]] = None,
    ):
        self.network = network
        self.config = config or TrackerConfig()
        self.seed = seed
        self.anchor = tuple(anchor) if anchor is not None else self.config.anchor
        self.rng = np.random.default_rng(seed)

    def reset(self):
        self.rng = np.random.default_rng(self.seed)

    def init(self, cloud: PointCloud, gt: Box3D) -> TrackerState:
        """
        Encode the first-frame target once

        Args:
            cloud: First frame
            gt: First-frame ground-truth box

        Returns:
            TrackerState holding the cached template features

        Raises:
            TrackingError: The ground-truth box holds no points
        """
        crop = crop_by_box(cloud, gt)
        if len(crop) == 0:
            logger.error("tracker_init_failed", reason="empty template crop", box=gt.model_dump())
            raise TrackingError("empty template crop: the first ground-truth box holds no points")
        template = self._encode(crop)
        logger.debug("tracker_initialized", template_points=len(crop))
        return TrackerState(template=template, first_crop=crop, first_box=gt, box=gt)

    def _encode(self, crop: PointCloud) -> FeatureMap:
        points = resample(crop, self.network.input_points, self.rng).points
        return self.network.encode_template(points)

    def step(self, state: TrackerState, cloud: PointCloud) -> FrameResult:
        """
        Track the target into the next frame, updating `state` in place

        An (almost) empty search area keeps the previous box, flags the frame and doubles the
        search margin for the following frame only.
        """
        config = self.config
        state.frame_index += 1
        started = time.perf_counter()

        margin = config.margin * (2.0 if state.widen_next else 1.0)
        crop = crop_by_box(cloud, enlarge_box(state.box, margin))
        if len(crop) < config.min_search_points:
            state.widen_next = True
            state.frames_since_good_score += 1
            FALLBACK_FRAMES.inc()
            pre_seconds = time.perf_counter() - started
            STAGE_SECONDS.labels(stage="pre").observe(pre_seconds)
            logger.warning(
                "search_area_empty", frame=state.frame_index, points=len(crop), margin=margin
            )
            return FrameResult(
                frame=state.frame_index,
                box=state.box,
                score=0.0,
                search_points=len(crop),
                fallback=True,
                pre_ms=pre_seconds * 1000.0,
            )
        state.widen_next = False
        search = resample(crop, self.network.input_points, self.rng).points
        prepared = time.perf_counter()

        output = self.network.predict(state.template, search)
        inferred = time.perf_counter()

        boxes = decode_proposals(search, output.reg, self.anchor, self.network.bins, self.network.layout)
        if config.size_source == "gt_whl":
            boxes[:, 3:6] = state.first_box.size
        best = select_and_nms(
            (boxes, np.clip(output.scores, 0.0, 1.0)),
            top_k=config.top_k,
            iou_threshold=config.nms_iou,
            mode=config.nms_mode,
        )
        state.box = best.box
        state.score = best.score
        state.frames_since_good_score = 0 if best.score >= GOOD_SCORE else state.frames_since_good_score + 1
        if config.template_mode == "first_gt_plus_previous":
            state.template = self._encode(
                PointCloud.concatenate([state.first_crop, crop_by_box(cloud, best.box)])
            )
        finished = time.perf_counter()

        timings = {
            "pre": prepared - started,
            "infer": inferred - prepared,
            "post": finished - inferred,
        }
        for stage, seconds in timings.items():
            STAGE_SECONDS.labels(stage=stage).observe(seconds)
        return FrameResult(
            frame=state.frame_index,
            box=best.box,
            score=best.score,
            search_points=len(crop),
            pre_ms=timings["pre"] * 1000.0,
            infer_ms=timings["infer"] * 1000.0,
            post_ms=timings["post"] * 1000.0,
        )

    def track_sequence(self, clouds: Sequence[PointCloud], first_box: Box3D) -> List[FrameResult]:
        """
        One-pass tracking: initialize on frame 0, then step through every later frame

        Only the first frame's box is ever seen; results cover frames 1..T-1.
        """
        if len(clouds) < 2:
            raise TrackingError("tracking needs at least two frames")
        self.reset()
        state = self.init(clouds[0], first_box)
        results = []
        for cloud in clouds[1:]:
            result = self.step(state, cloud)
            logger.debug("frame_tracked", **result.to_row())
            results.append(result)
        return results


def stage_means(results: Sequence[FrameResult]) -> Tuple[float, float, float]:
    """Mean per-frame milliseconds of the pre, infer and post stages"""
    if not results:
        return 0.0, 0.0, 0.0
    table = np.array([[r.pre_ms, r.infer_ms, r.post_ms] for r in results])
    pre, infer, post = table.mean(axis=0)
    return float(pre), float(infer), float(post)

