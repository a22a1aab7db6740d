"""
One Pass Evaluation
Success/Precision AUCs, per-sequence tracking runs, sparsity breakdowns and ablation sweeps
"""
import json
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Callable, Dict, List, Optional, Protocol, Sequence, Tuple

import numpy as np
import pandas as pd
from pydantic import BaseModel, Field
from tqdm import tqdm

from siamtrack.core.config import EvalConfig, RunConfig, TrackerConfig
from siamtrack.core.errors import SiamTrackError, TrackingError
from siamtrack.core.logging import logger
from siamtrack.models.geometry import Box3D, PointCloud
from siamtrack.models.tracking import FrameResult, OPEReport, SparsityBucket
from siamtrack.services.geometry import box_iou_3d, box_iou_bev, center_distance, points_in_box
from siamtrack.services.tracker import Tracker, stage_means

SWEEP_AXES = ("xcorr_variant", "D", "lambda")
# (label, inclusive upper bound) on first-frame target points
SPARSITY_BUCKETS = (("<=15", 15), ("16-50", 50), ("51-150", 150), (">150", None))


def _thresholds(values: Optional[Sequence[float]], stop: float) -> np.ndarray:
    if values is None:
        return np.linspace(0.0, stop, 21)
    return np.asarray(values, dtype=np.float64)


def success_auc(ious: Sequence[float], thresholds: Optional[Sequence[float]] = None) -> float:
    """Mean over thresholds t of the share of frames with IoU >= t, times 100"""
    ious = np.asarray(ious, dtype=np.float64)
    if ious.size == 0:
        raise ValueError("success AUC needs at least one frame")
    grid = _thresholds(thresholds, 1.0)
    return float(np.mean(ious[None, :] >= grid[:, None], axis=1).mean() * 100.0)


def precision_auc(errors: Sequence[float], thresholds: Optional[Sequence[float]] = None) -> float:
    """Mean over thresholds t of the share of frames with center error <= t, times 100"""
    errors = np.asarray(errors, dtype=np.float64)
    if errors.size == 0:
        raise ValueError("precision AUC needs at least one frame")
    grid = _thresholds(thresholds, 2.0)
    return float(np.mean(errors[None, :] <= grid[:, None], axis=1).mean() * 100.0)


class EvalSource(Protocol):
    name: str
    class_name: str
    boxes: List[Box3D]

    def __len__(self) -> int:
        ...

    def cloud(self, index: int) -> PointCloud:
        ...


class SequenceTracker(Protocol):
    def track_sequence(self, clouds: Sequence[PointCloud], first_box: Box3D) -> List[FrameResult]:
        ...


TrackerFactory = Callable[[EvalSource, int], SequenceTracker]


class SequenceOutcome(BaseModel):
    """Scored tracking run of one sequence"""

    name: str
    class_name: str
    first_points: int
    results: List[FrameResult] = Field(default_factory=list)
    ious_3d: List[float] = Field(default_factory=list)
    ious_bev: List[float] = Field(default_factory=list)
    errors_3d: List[float] = Field(default_factory=list)
    errors_bev: List[float] = Field(default_factory=list)
    error: Optional[str] = None

    @property
    def failed(self) -> bool:
        return self.error is not None

    def frame_rows(self) -> List[Dict]:
        rows = []
        for result, iou_3d, iou_bev, error_3d in zip(self.results, self.ious_3d, self.ious_bev, self.errors_3d):
            row = {"sequence": self.name, **result.to_row()}
            row.update(iou_3d=iou_3d, iou_bev=iou_bev, center_error=error_3d)
            rows.append(row)
        return rows


def network_tracker_factory(
    network, config: TrackerConfig, anchor: Optional[Sequence[float]] = None
) -> TrackerFactory:
    """Each sequence gets its own tracker over a cache-separate copy of the network"""

    def build(source: EvalSource, seed: int) -> SequenceTracker:
        return Tracker(network.shared_copy(), config, seed=seed, anchor=anchor)

    return build


class GroundTruthEcho:
    """Answers every frame with its ground-truth box; scores the evaluation path in isolation"""

    def __init__(self, boxes: Sequence[Box3D]):
        self.boxes = list(boxes)

    def track_sequence(self, clouds: Sequence[PointCloud], first_box: Box3D) -> List[FrameResult]:
        if len(clouds) < 2:
            raise TrackingError("tracking needs at least two frames")
        return [
            FrameResult(frame=index, box=self.boxes[index], score=1.0, search_points=len(clouds[index]))
            for index in range(1, len(clouds))
        ]


def ground_truth_echo_factory(source: EvalSource, seed: int) -> SequenceTracker:
    return GroundTruthEcho(source.boxes)


def track_and_score(source: EvalSource, tracker: SequenceTracker) -> SequenceOutcome:
    """Run one-pass tracking on a sequence and score frames 1..T-1"""
    boxes = source.boxes
    first_cloud = source.cloud(0)
    outcome = SequenceOutcome(
        name=source.name,
        class_name=source.class_name,
        first_points=int(points_in_box(first_cloud.points, boxes[0]).sum()),
    )
    clouds = [first_cloud] + [source.cloud(index) for index in range(1, len(source))]
    try:
        results = tracker.track_sequence(clouds, boxes[0])
    except TrackingError as e:
        logger.warning("sequence_failed", sequence=source.name, error=str(e))
        outcome.error = str(e)
        return outcome
    for result, gt in zip(results, boxes[1:]):
        outcome.results.append(result)
        outcome.ious_3d.append(box_iou_3d(result.box, gt))
        outcome.ious_bev.append(box_iou_bev(result.box, gt))
        outcome.errors_3d.append(center_distance(result.box, gt))
        outcome.errors_bev.append(center_distance(result.box, gt, bev=True))
    return outcome


def _bucket(points: int) -> str:
    for label, upper in SPARSITY_BUCKETS:
        if upper is None or points <= upper:
            return label
    return SPARSITY_BUCKETS[-1][0]


def report_from_outcomes(
    outcomes: Sequence[SequenceOutcome],
    config: Optional[EvalConfig] = None,
    label: str = "",
    class_name: Optional[str] = None,
) -> OPEReport:
    """Pool per-frame statistics over every successful sequence"""
    config = config or EvalConfig()
    scored = [outcome for outcome in outcomes if not outcome.failed and outcome.results]
    if not scored:
        raise TrackingError("every sequence failed to initialize")

    def pooled(field: str, group: Sequence[SequenceOutcome]) -> np.ndarray:
        return np.concatenate([getattr(outcome, field) for outcome in group])

    success, precision = config.success_thresholds, config.precision_thresholds
    buckets = []
    for bucket_label, _ in SPARSITY_BUCKETS:
        members = [outcome for outcome in scored if _bucket(outcome.first_points) == bucket_label]
        if members:
            buckets.append(
                SparsityBucket(
                    bucket=bucket_label,
                    sequences=len(members),
                    frames=sum(len(outcome.results) for outcome in members),
                    success_3d=success_auc(pooled("ious_3d", members), success),
                    precision_3d=precision_auc(pooled("errors_3d", members), precision),
                )
            )
    results = [result for outcome in scored for result in outcome.results]
    pre, infer, post = stage_means(results)
    return OPEReport(
        label=label,
        class_name=class_name,
        success_3d=success_auc(pooled("ious_3d", scored), success),
        precision_3d=precision_auc(pooled("errors_3d", scored), precision),
        success_bev=success_auc(pooled("ious_bev", scored), success),
        precision_bev=precision_auc(pooled("errors_bev", scored), precision),
        frames=len(results),
        sequences=len(scored),
        failed_sequences=len(outcomes) - len(scored),
        fallback_frames=sum(result.fallback for result in results),
        mean_pre_ms=pre,
        mean_infer_ms=infer,
        mean_post_ms=post,
        sparsity=buckets,
    )


def run_ope(
    sources: Sequence[EvalSource],
    tracker_factory: TrackerFactory,
    config: Optional[EvalConfig] = None,
    seed: int = 0,
    label: str = "",
    class_name: Optional[str] = None,
) -> Tuple[OPEReport, List[SequenceOutcome]]:
    """
    Track every sequence (in parallel when configured) and pool the scores

    Sequence i is tracked with seed `seed + i`, so the report does not depend on the worker
    count.
    """
    config = config or EvalConfig()
    if not sources:
        raise TrackingError("evaluation needs at least one sequence")

    def run(item: Tuple[int, EvalSource]) -> SequenceOutcome:
        index, source = item
        return track_and_score(source, tracker_factory(source, seed + index))

    items = list(enumerate(sources))
    with ThreadPoolExecutor(max_workers=config.max_workers) as pool:
        outcomes = list(tqdm(pool.map(run, items), total=len(items), desc="sequences", disable=None))
    report = report_from_outcomes(outcomes, config, label=label, class_name=class_name)
    logger.info("evaluation_completed", **report.to_row())
    return report, outcomes


def evaluate(
    network,
    tracker_config: TrackerConfig,
    sources: Sequence[EvalSource],
    config: Optional[EvalConfig] = None,
    seed: int = 0,
    anchor: Optional[Sequence[float]] = None,
    label: str = "",
) -> OPEReport:
    """OPE report of a network driven by the standard tracker"""
    factory = network_tracker_factory(network, tracker_config, anchor)
    report, _ = run_ope(sources, factory, config, seed, label=label, class_name=tracker_config.class_name)
    return report


def mean_report(reports: Sequence[OPEReport], label: str = "mean") -> OPEReport:
    """Frame-weighted mean of several reports"""
    if not reports:
        raise ValueError("no reports to average")
    weights = np.array([report.frames for report in reports], dtype=np.float64)
    if weights.sum() == 0:
        weights = np.ones(len(reports))

    def mean(field: str) -> float:
        return float(np.average([getattr(report, field) for report in reports], weights=weights))

    return OPEReport(
        label=label,
        success_3d=mean("success_3d"),
        precision_3d=mean("precision_3d"),
        success_bev=mean("success_bev"),
        precision_bev=mean("precision_bev"),
        frames=int(sum(report.frames for report in reports)),
        sequences=sum(report.sequences for report in reports),
        failed_sequences=sum(report.failed_sequences for report in reports),
        fallback_frames=sum(report.fallback_frames for report in reports),
        mean_pre_ms=mean("mean_pre_ms"),
        mean_infer_ms=mean("mean_infer_ms"),
        mean_post_ms=mean("mean_post_ms"),
    )


def apply_axis(config: RunConfig, axis: str, value) -> RunConfig:
    """Config copy with one sweep axis set"""
    if axis == "xcorr_variant":
        xcorr = config.network.xcorr.model_copy(update={"variant": str(value)})
        network = config.network.model_copy(update={"xcorr": type(xcorr).model_validate(xcorr.model_dump())})
        return config.model_copy(update={"network": network})
    if axis == "D":
        tracker = type(config.tracker).model_validate({**config.tracker.model_dump(), "search_margin": float(value)})
        return config.model_copy(update={"tracker": tracker})
    if axis == "lambda":
        loss = type(config.loss).model_validate({**config.loss.model_dump(), "reg_weight": float(value)})
        return config.model_copy(update={"loss": loss})
    raise ValueError(f"unknown sweep axis {axis!r}, expected one of {SWEEP_AXES}")


def ablation_sweep(
    axis: str,
    values: Sequence,
    base_config: RunConfig,
    prepare: Callable[[RunConfig], Tuple[object, Sequence[float]]],
    sources: Sequence[EvalSource],
) -> pd.DataFrame:
    """
    One evaluation per axis value, same seeds throughout

    Args:
        axis: "xcorr_variant", "D" or "lambda"
        values: Values to sweep
        base_config: Configuration the axis is applied to
        prepare: Builds (network, anchor) for a cell's config, training it when needed
        sources: Evaluation sequences

    Returns:
        One row per value; a failing cell records its error and the sweep continues
    """
    if not values:
        raise ValueError("sweep needs at least one value")
    rows = []
    for value in values:
        row: Dict = {"axis": axis, "value": value}
        try:
            config = apply_axis(base_config, axis, value)
            network, anchor = prepare(config)
            report = evaluate(
                network, config.tracker, sources, config.eval, seed=config.seed, anchor=anchor, label=f"{axis}={value}"
            )
            row.update(report.to_row())
            row["error"] = ""
        except (SiamTrackError, ValueError) as e:
            logger.error("sweep_cell_failed", axis=axis, value=value, exc_info=True)
            row["error"] = str(e)
        rows.append(row)
    return pd.DataFrame(rows)


def write_report(reports: Sequence[OPEReport], out_dir: Path, outcomes: Sequence[SequenceOutcome] = ()) -> Path:
    """report.json, report.csv, sparsity.csv and (optionally) frames.csv"""
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "report.json").write_text(
        json.dumps([report.model_dump(mode="json") for report in reports], indent=2)
    )
    table = pd.DataFrame([report.to_row() for report in reports])
    table.to_csv(out_dir / "report.csv", index=False)
    sparsity = [
        {"label": report.label, "class_name": report.class_name, **bucket.model_dump()}
        for report in reports
        for bucket in report.sparsity
    ]
    pd.DataFrame(sparsity).to_csv(out_dir / "sparsity.csv", index=False)
    frames = [row for outcome in outcomes for row in outcome.frame_rows()]
    if frames:
        pd.DataFrame(frames).to_csv(out_dir / "frames.csv", index=False)
    return out_dir / "report.csv"


def format_report_table(reports: Sequence[OPEReport]) -> str:
    columns = ["label", "class_name", "success_3d", "precision_3d", "success_bev", "precision_bev", "frames", "fps"]
    table = pd.DataFrame([report.to_row() for report in reports])
    return table[columns].to_string(index=False, float_format=lambda value: f"{value:.2f}")
