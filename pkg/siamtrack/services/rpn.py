"""
Region Proposal Network
Foreground classification and box regression heads, the bin-based box codec, top-K selection and NMS
"""
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict

from siamtrack.core.config import BinConfig
from siamtrack.core.errors import ShapeMismatchError, TrackingError
from siamtrack.models.geometry import Box3D, normalize_angles
from siamtrack.models.network import BinTargets, Proposal
from siamtrack.services.geometry import iou_matrix
from siamtrack.services.nn import Dropout, Linear, Module, ReLU, Sequential, Sigmoid

LAYOUT_VERSION = 1
MIN_BOX_SIZE = 1e-3
AXES = ("x", "y", "z", "ry")


class ChannelLayout(BaseModel):
    """
    Channel map of one regression row

    The bin layout stores bin logits for x, y, z and heading followed by one residual slot per
    axis (x, y, z, heading, w, h, l). The direct layout stores only the seven residual slots:
    center offsets normalized by the search half-range, heading divided by pi, and size
    residuals.
    """

    kind: str
    bin_counts: Tuple[int, int, int, int]

    model_config = ConfigDict(frozen=True)

    @classmethod
    def from_config(cls, bins: BinConfig, kind: str = "bin") -> "ChannelLayout":
        if kind not in ("bin", "direct"):
            raise ValueError(f"unknown regression layout {kind!r}")
        counts = (bins.horizontal_count, bins.horizontal_count, bins.vertical_count, bins.heading_bins)
        return cls(kind=kind, bin_counts=counts if kind == "bin" else (0, 0, 0, 0))

    @property
    def logit_slices(self) -> Dict[str, slice]:
        slices, start = {}, 0
        for axis, count in zip(AXES, self.bin_counts):
            slices[axis] = slice(start, start + count)
            start += count
        return slices

    @property
    def residual_offset(self) -> int:
        return sum(self.bin_counts)

    def residual_channel(self, name: str) -> int:
        return self.residual_offset + ("x", "y", "z", "ry", "w", "h", "l").index(name)

    @property
    def channels(self) -> int:
        return self.residual_offset + 7

    def describe(self) -> Dict:
        """Layout descriptor stored with checkpoints"""
        return {
            "layout_version": LAYOUT_VERSION,
            "kind": self.kind,
            "bin_counts": list(self.bin_counts),
            "channels": self.channels,
        }


class ClassificationHead(Module):
    """Per-point foreground probability: Linear, ReLU, Dropout, Linear, sigmoid"""

    def __init__(
        self,
        in_features: int,
        rng: np.random.Generator,
        hidden: int = 128,
        dropout: float = 0.5,
        dtype="float32",
        name: str = "cls_head",
    ):
        self.in_features = in_features
        self.net = Sequential(
            [
                Linear(in_features, hidden, rng, dtype=dtype, name=f"{name}.0"),
                ReLU(),
                Dropout(dropout, rng),
                Linear(hidden, 1, rng, dtype=dtype, name=f"{name}.1"),
                Sigmoid(),
            ]
        )

    def forward(self, features: np.ndarray) -> np.ndarray:
        if features.ndim != 2 or features.shape[1] != self.in_features:
            raise ShapeMismatchError(
                f"classification head expects width {self.in_features}, got {features.shape}"
            )
        return self.net.forward(features)[:, 0]

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        return self.net.backward(grad_out.reshape(-1, 1))


class RegressionHead(Module):
    """Per-point regression row laid out by a ChannelLayout"""

    def __init__(
        self,
        in_features: int,
        layout: ChannelLayout,
        rng: np.random.Generator,
        hidden: int = 128,
        dropout: float = 0.5,
        dtype="float32",
        name: str = "reg_head",
    ):
        self.in_features = in_features
        self.layout = layout
        self.net = Sequential(
            [
                Linear(in_features, hidden, rng, dtype=dtype, name=f"{name}.0"),
                ReLU(),
                Dropout(dropout, rng),
                Linear(hidden, layout.channels, rng, dtype=dtype, name=f"{name}.1"),
            ]
        )

    def forward(self, features: np.ndarray) -> np.ndarray:
        if features.ndim != 2 or features.shape[1] != self.in_features:
            raise ShapeMismatchError(
                f"regression head expects width {self.in_features}, got {features.shape}"
            )
        return self.net.forward(features)

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        return self.net.backward(grad_out)


def _axis_params(bins: BinConfig) -> Dict[str, Tuple[float, float, int]]:
    """(half range S, bin length l, bin count) per center axis"""
    return {
        "x": (bins.horizontal_range, bins.horizontal_bin, bins.horizontal_count),
        "y": (bins.horizontal_range, bins.horizontal_bin, bins.horizontal_count),
        "z": (bins.vertical_range, bins.vertical_bin, bins.vertical_count),
    }


def encode_targets(
    points: np.ndarray,
    gt: Box3D,
    anchor: Sequence[float],
    bins: BinConfig,
) -> BinTargets:
    """
    Encode a ground-truth box relative to each point

    Args:
        points: (N, 3) source points, or one 3-vector
        gt: Ground-truth box
        anchor: (w, h, l) anchor size
        bins: Bin geometry

    Returns:
        BinTargets with one entry per point; points whose offset leaves [-S, S] on any axis are
        marked out of range (their bins are clamped, their residuals are not meaningful)
    """
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    center = gt.center
    in_range = np.ones(len(points), dtype=bool)
    encoded: Dict[str, np.ndarray] = {}
    for axis_index, (axis, (half_range, length, count)) in enumerate(_axis_params(bins).items()):
        offset = center[axis_index] - points[:, axis_index] + half_range
        in_range &= (offset >= 0.0) & (offset <= 2.0 * half_range)
        bin_index = np.clip(np.floor(offset / length), 0, count - 1).astype(np.int64)
        encoded[f"bin_{axis}"] = bin_index
        encoded[f"res_{axis}"] = (offset - (bin_index * length + length / 2.0)) / length

    heading = float(np.mod(gt.ry, 2.0 * np.pi))
    heading_bin_length = bins.heading_bin
    heading_bin = min(int(np.floor(heading / heading_bin_length)), bins.heading_bins - 1)
    heading_res = (heading - (heading_bin * heading_bin_length + heading_bin_length / 2.0)) / heading_bin_length

    anchor_w, anchor_h, anchor_l = anchor
    count = len(points)
    return BinTargets(
        bin_x=encoded["bin_x"],
        bin_y=encoded["bin_y"],
        bin_z=encoded["bin_z"],
        bin_ry=np.full(count, heading_bin, dtype=np.int64),
        res_x=encoded["res_x"],
        res_y=encoded["res_y"],
        res_z=encoded["res_z"],
        res_ry=np.full(count, heading_res),
        res_w=np.full(count, (gt.w - anchor_w) / anchor_w),
        res_h=np.full(count, (gt.h - anchor_h) / anchor_h),
        res_l=np.full(count, (gt.l - anchor_l) / anchor_l),
        in_range=in_range,
    )


def encode_direct_targets(points: np.ndarray, gt: Box3D, anchor: Sequence[float], bins: BinConfig) -> np.ndarray:
    """(N, 7) targets of the direct layout"""
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    scale = np.array([bins.horizontal_range, bins.horizontal_range, bins.vertical_range])
    offsets = (gt.center[None, :] - points) / scale
    anchor = np.asarray(anchor, dtype=np.float64)
    sizes = (gt.size - anchor) / anchor
    rest = np.concatenate([[gt.ry / np.pi], sizes])
    return np.concatenate([offsets, np.tile(rest, (len(points), 1))], axis=1)


def decode_proposals(
    points: np.ndarray,
    reg: np.ndarray,
    anchor: Sequence[float],
    bins: BinConfig,
    layout: ChannelLayout,
    use_bins: Optional[np.ndarray] = None,
) -> np.ndarray:
    """
    Decode regression rows into boxes, vectorized over points

    Args:
        points: (N, 3) source points
        reg: (N, C) regression rows
        anchor: (w, h, l) anchor size
        bins: Bin geometry
        layout: Channel layout of `reg`
        use_bins: Optional (N, 4) bin indices overriding the argmax of the logits

    Returns:
        (N, 7) box arrays (cx, cy, cz, w, h, l, ry)
    """
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    reg = np.atleast_2d(np.asarray(reg, dtype=np.float64))
    if reg.shape != (len(points), layout.channels):
        raise ShapeMismatchError(f"expected ({len(points)}, {layout.channels}) regression rows, got {reg.shape}")
    residual = reg[:, layout.residual_offset :]
    anchor = np.asarray(anchor, dtype=np.float64)
    sizes = np.maximum(anchor[None, :] * (1.0 + residual[:, 4:7]), MIN_BOX_SIZE)

    if layout.kind == "direct":
        scale = np.array([bins.horizontal_range, bins.horizontal_range, bins.vertical_range])
        centers = points + residual[:, 0:3] * scale
        heading = residual[:, 3] * np.pi
    else:
        slices = layout.logit_slices
        centers = np.empty_like(points)
        for axis_index, (axis, (half_range, length, _)) in enumerate(_axis_params(bins).items()):
            chosen = (
                use_bins[:, axis_index]
                if use_bins is not None
                else np.argmax(reg[:, slices[axis]], axis=1)
            )
            centers[:, axis_index] = (
                points[:, axis_index] - half_range + chosen * length + length / 2.0
                + residual[:, axis_index] * length
            )
        heading_length = bins.heading_bin
        chosen = use_bins[:, 3] if use_bins is not None else np.argmax(reg[:, slices["ry"]], axis=1)
        heading = chosen * heading_length + heading_length / 2.0 + residual[:, 3] * heading_length
    boxes = np.concatenate([centers, sizes, normalize_angles(heading)[:, None]], axis=1)
    return boxes


def decode_proposal(
    point: Sequence[float],
    reg_row: np.ndarray,
    anchor: Sequence[float],
    bins: BinConfig,
    layout: Optional[ChannelLayout] = None,
) -> Box3D:
    layout = layout or ChannelLayout.from_config(bins)
    return Box3D.from_array(decode_proposals(np.asarray(point)[None, :], np.asarray(reg_row)[None, :], anchor, bins, layout)[0])


def targets_to_reg(
    targets: BinTargets, layout: ChannelLayout, confidence: float = 10.0
) -> np.ndarray:
    """
    Regression rows that decode exactly to the encoded targets

    The true bin of every axis gets logit `confidence`, the others 0.
    """
    if layout.kind != "bin":
        raise ValueError("targets_to_reg needs the bin layout")
    rows = np.zeros((len(targets), layout.channels))
    index = np.arange(len(targets))
    for axis, column in zip(AXES, targets.bins().T):
        rows[index, layout.logit_slices[axis].start + column] = confidence
    offset = layout.residual_offset
    rows[:, offset : offset + 4] = targets.center_residuals()
    rows[:, offset + 4 : offset + 7] = targets.size_residuals()
    return rows


def rank_order(scores: np.ndarray, point_index: np.ndarray) -> np.ndarray:
    """Score descending, ties by lower point index"""
    return np.lexsort((point_index, -scores))


def nms(
    boxes: np.ndarray,
    scores: np.ndarray,
    iou_threshold: float = 0.8,
    mode: str = "bev",
    point_index: Optional[np.ndarray] = None,
) -> List[int]:
    """
    Greedy non-maximum suppression

    Args:
        boxes: (K, 7) box arrays
        scores: (K,) scores
        iou_threshold: Boxes overlapping a kept box by more than this are suppressed
        mode: "bev" or "3d" IoU
        point_index: Tie-break keys (defaults to row order)

    Returns:
        Indices of the kept boxes, best first
    """
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 7)
    scores = np.asarray(scores, dtype=np.float64)
    point_index = np.arange(len(boxes)) if point_index is None else np.asarray(point_index)
    order = rank_order(scores, point_index)
    overlaps = iou_matrix(boxes, mode=mode)
    suppressed = np.zeros(len(boxes), dtype=bool)
    kept: List[int] = []
    for candidate in order:
        if suppressed[candidate]:
            continue
        kept.append(int(candidate))
        suppressed |= overlaps[candidate] > iou_threshold
    return kept


def select_and_nms(
    proposals: Union[Sequence[Proposal], Tuple[np.ndarray, np.ndarray]],
    top_k: int = 100,
    iou_threshold: float = 0.8,
    mode: str = "bev",
) -> Proposal:
    """
    Final box of one frame

    Args:
        proposals: Proposal records, or a (boxes (N, 7), scores (N,)) pair whose row index is
            the source point index
        top_k: Number of best-scoring proposals entering NMS
        iou_threshold: NMS overlap threshold
        mode: "bev" or "3d" IoU

    Returns:
        The highest-scoring NMS survivor
    """
    if isinstance(proposals, tuple):
        boxes, scores = np.asarray(proposals[0], dtype=np.float64), np.asarray(proposals[1], dtype=np.float64)
        point_index = np.arange(len(boxes))
    else:
        boxes = np.array([p.box.to_array() for p in proposals]).reshape(-1, 7)
        scores = np.array([p.score for p in proposals], dtype=np.float64)
        point_index = np.array([p.point_index for p in proposals], dtype=np.int64)
    if len(boxes) == 0:
        raise TrackingError("no proposals to select from")

    top = rank_order(scores, point_index)[:top_k]
    kept = nms(boxes[top], scores[top], iou_threshold, mode=mode, point_index=point_index[top])
    best = top[kept[0]]
    return Proposal(
        box=Box3D.from_array(boxes[best]),
        score=float(np.clip(scores[best], 0.0, 1.0)),
        point_index=int(point_index[best]),
    )


def proposal_rows(frame: int, boxes: np.ndarray, scores: np.ndarray) -> List[Dict]:
    """Debug dump rows: frame, score and the seven box fields"""
    return [
        {"frame": frame, "score": float(score), **dict(zip(("cx", "cy", "cz", "w", "h", "l", "ry"), map(float, box)))}
        for box, score in zip(boxes, scores)
    ]
