"""
Geometry Service
Point-in-box tests, rotated BEV/3D IoU, transforms, search areas and resampling
"""
import math
from typing import List, Optional, Sequence

import numpy as np

from siamtrack.core.errors import EmptyCloudError
from siamtrack.models.geometry import (
    Box3D,
    PointCloud,
    RigidTransform,
    normalize_angle,
)

DEGENERATE_AREA = 1e-12


def points_in_box(points: np.ndarray, box: Box3D) -> np.ndarray:
    """
    Closed-box membership for many points

    Args:
        points: (N, 3) coordinates
        box: Oriented box

    Returns:
        Boolean mask of shape (N,); boundary points count as inside
    """
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    shifted = points - box.center
    c, s = math.cos(box.ry), math.sin(box.ry)
    # rotate by -ry about z
    along = c * shifted[:, 0] + s * shifted[:, 1]
    across = -s * shifted[:, 0] + c * shifted[:, 1]
    return (
        (np.abs(along) <= box.l / 2.0)
        & (np.abs(across) <= box.w / 2.0)
        & (np.abs(shifted[:, 2]) <= box.h / 2.0)
    )


def point_in_box(point: Sequence[float], box: Box3D) -> bool:
    return bool(points_in_box(np.asarray(point, dtype=np.float64), box)[0])


def polygon_clip(subject: np.ndarray, clip: np.ndarray) -> Optional[np.ndarray]:
    """
    Sutherland-Hodgman clipping of a polygon against a convex polygon

    Args:
        subject: (K, 2) vertices, counter-clockwise
        clip: (M, 2) convex vertices, counter-clockwise

    Returns:
        Intersection vertices, or None when empty
    """

    def inside(p, a, b) -> bool:
        return (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]) >= 0.0

    def intersection(s, e, a, b):
        dc = (a[0] - b[0], a[1] - b[1])
        dp = (s[0] - e[0], s[1] - e[1])
        denominator = dc[0] * dp[1] - dc[1] * dp[0]
        if abs(denominator) < 1e-15:
            return e
        n1 = a[0] * b[1] - a[1] * b[0]
        n2 = s[0] * e[1] - s[1] * e[0]
        return ((n1 * dp[0] - n2 * dc[0]) / denominator, (n1 * dp[1] - n2 * dc[1]) / denominator)

    output: List = [tuple(p) for p in subject]
    a = tuple(clip[-1])
    for vertex in clip:
        b = tuple(vertex)
        candidates = output
        output = []
        if not candidates:
            return None
        s = candidates[-1]
        for e in candidates:
            if inside(e, a, b):
                if not inside(s, a, b):
                    output.append(intersection(s, e, a, b))
                output.append(e)
            elif inside(s, a, b):
                output.append(intersection(s, e, a, b))
            s = e
        a = b
    if len(output) < 3:
        return None
    return np.asarray(output, dtype=np.float64)


def polygon_area(polygon: np.ndarray) -> float:
    """Shoelace area"""
    x, y = polygon[:, 0], polygon[:, 1]
    return 0.5 * abs(float(np.dot(x, np.roll(y, 1)) - np.dot(y, np.roll(x, 1))))


def _ordered(a: Box3D, b: Box3D):
    # a fixed argument order makes the float result exactly symmetric
    return (a, b) if tuple(a.to_array()) <= tuple(b.to_array()) else (b, a)


def bev_intersection_area(a: Box3D, b: Box3D) -> float:
    first, second = _ordered(a, b)
    polygon = polygon_clip(first.corners_bev(), second.corners_bev())
    if polygon is None:
        return 0.0
    area = polygon_area(polygon)
    return area if area >= DEGENERATE_AREA else 0.0


def box_iou_bev(a: Box3D, b: Box3D) -> float:
    """Rotated-rectangle IoU in the horizontal plane"""
    inter = bev_intersection_area(a, b)
    if inter <= 0.0:
        return 0.0
    union = a.bev_area + b.bev_area - inter
    return float(min(max(inter / union, 0.0), 1.0))


def vertical_overlap(a: Box3D, b: Box3D) -> float:
    top = min(a.cz + a.h / 2.0, b.cz + b.h / 2.0)
    bottom = max(a.cz - a.h / 2.0, b.cz - b.h / 2.0)
    return max(0.0, top - bottom)


def box_iou_3d(a: Box3D, b: Box3D) -> float:
    """Rotated 3D IoU: BEV intersection times vertical overlap over the volume union"""
    first, second = _ordered(a, b)
    inter = bev_intersection_area(first, second) * vertical_overlap(first, second)
    if inter <= 0.0:
        return 0.0
    union = first.volume + second.volume - inter
    return float(min(max(inter / union, 0.0), 1.0))


def _corners_bev_batch(boxes: np.ndarray) -> np.ndarray:
    """(P, 7) box arrays -> (P, 4, 2) counter-clockwise footprints"""
    half_l, half_w = boxes[:, 5] / 2.0, boxes[:, 3] / 2.0
    local = np.stack(
        [
            np.stack([half_l, half_w], axis=-1),
            np.stack([-half_l, half_w], axis=-1),
            np.stack([-half_l, -half_w], axis=-1),
            np.stack([half_l, -half_w], axis=-1),
        ],
        axis=1,
    )
    c, s = np.cos(boxes[:, 6])[:, None], np.sin(boxes[:, 6])[:, None]
    x = c * local[..., 0] - s * local[..., 1] + boxes[:, 0:1]
    y = s * local[..., 0] + c * local[..., 1] + boxes[:, 1:2]
    return np.stack([x, y], axis=-1)


def _inside_footprint(points: np.ndarray, boxes: np.ndarray, tol: float = 1e-9) -> np.ndarray:
    """points (P, K, 2) against boxes (P, 7) -> (P, K)"""
    dx = points[..., 0] - boxes[:, 0:1]
    dy = points[..., 1] - boxes[:, 1:2]
    c, s = np.cos(boxes[:, 6])[:, None], np.sin(boxes[:, 6])[:, None]
    along = c * dx + s * dy
    across = -s * dx + c * dy
    return (np.abs(along) <= boxes[:, 5:6] / 2.0 + tol) & (
        np.abs(across) <= boxes[:, 3:4] / 2.0 + tol
    )


def pairwise_bev_intersection(boxes_a: np.ndarray, boxes_b: np.ndarray) -> np.ndarray:
    """
    Intersection areas of aligned box pairs, vectorized

    The intersection polygon is built from the corners of each box inside the other plus all
    edge/edge crossings, ordered by angle around their centroid.

    Args:
        boxes_a: (P, 7) box arrays
        boxes_b: (P, 7) box arrays

    Returns:
        (P,) intersection areas
    """
    boxes_a = np.asarray(boxes_a, dtype=np.float64).reshape(-1, 7)
    boxes_b = np.asarray(boxes_b, dtype=np.float64).reshape(-1, 7)
    corners_a = _corners_bev_batch(boxes_a)
    corners_b = _corners_bev_batch(boxes_b)

    a_in_b = _inside_footprint(corners_a, boxes_b)
    b_in_a = _inside_footprint(corners_b, boxes_a)

    p = corners_a[:, :, None, :]
    r = np.roll(corners_a, -1, axis=1)[:, :, None, :] - p
    q = corners_b[:, None, :, :]
    s = np.roll(corners_b, -1, axis=1)[:, None, :, :] - q
    denominator = r[..., 0] * s[..., 1] - r[..., 1] * s[..., 0]
    qp = q - p
    safe = np.where(np.abs(denominator) < 1e-15, 1.0, denominator)
    t = (qp[..., 0] * s[..., 1] - qp[..., 1] * s[..., 0]) / safe
    u = (qp[..., 0] * r[..., 1] - qp[..., 1] * r[..., 0]) / safe
    crossing_ok = (
        (np.abs(denominator) >= 1e-15) & (t >= 0.0) & (t <= 1.0) & (u >= 0.0) & (u <= 1.0)
    )
    crossings = (p + t[..., None] * r).reshape(len(boxes_a), 16, 2)

    candidates = np.concatenate([corners_a, corners_b, crossings], axis=1)
    valid = np.concatenate([a_in_b, b_in_a, crossing_ok.reshape(len(boxes_a), 16)], axis=1)
    count = valid.sum(axis=1)

    weights = valid.astype(np.float64)
    centroid = (candidates * weights[..., None]).sum(axis=1) / np.maximum(count, 1)[:, None]
    angles = np.arctan2(
        candidates[..., 1] - centroid[:, None, 1], candidates[..., 0] - centroid[:, None, 0]
    )
    angles = np.where(valid, angles, np.inf)
    order = np.argsort(angles, axis=1, kind="stable")
    ordered = np.take_along_axis(candidates, order[..., None], axis=1)
    ordered_valid = np.take_along_axis(valid, order, axis=1)
    # invalid slots collapse onto the first vertex and add no area
    ordered = np.where(ordered_valid[..., None], ordered, ordered[:, :1, :])
    x, y = ordered[..., 0], ordered[..., 1]
    area = 0.5 * np.abs(
        np.sum(x * np.roll(y, -1, axis=1) - y * np.roll(x, -1, axis=1), axis=1)
    )
    area = np.where(count >= 3, area, 0.0)
    return np.where(area >= DEGENERATE_AREA, area, 0.0)


def iou_matrix(boxes: np.ndarray, mode: str = "bev") -> np.ndarray:
    """
    Symmetric IoU matrix of a box set

    Args:
        boxes: (P, 7) box arrays
        mode: "bev" or "3d"

    Returns:
        (P, P) IoU values
    """
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 7)
    count = len(boxes)
    result = np.eye(count)
    if count < 2:
        return result
    rows, cols = np.triu_indices(count, k=1)
    a, b = boxes[rows], boxes[cols]
    # circumscribed-circle rejection
    radius_a = 0.5 * np.hypot(a[:, 3], a[:, 5])
    radius_b = 0.5 * np.hypot(b[:, 3], b[:, 5])
    near = np.hypot(a[:, 0] - b[:, 0], a[:, 1] - b[:, 1]) <= radius_a + radius_b
    inter = np.zeros(len(rows))
    if np.any(near):
        inter[near] = pairwise_bev_intersection(a[near], b[near])
    if mode == "3d":
        top = np.minimum(a[:, 2] + a[:, 4] / 2.0, b[:, 2] + b[:, 4] / 2.0)
        bottom = np.maximum(a[:, 2] - a[:, 4] / 2.0, b[:, 2] - b[:, 4] / 2.0)
        inter = inter * np.maximum(0.0, top - bottom)
        size_a = a[:, 3] * a[:, 4] * a[:, 5]
        size_b = b[:, 3] * b[:, 4] * b[:, 5]
    else:
        size_a = a[:, 3] * a[:, 5]
        size_b = b[:, 3] * b[:, 5]
    union = size_a + size_b - inter
    iou = np.clip(np.where(inter > 0.0, inter / union, 0.0), 0.0, 1.0)
    result[rows, cols] = iou
    result[cols, rows] = iou
    return result


def enlarge_box(box: Box3D, margin: float) -> Box3D:
    """Search area: horizontal extents grown by margin on each side"""
    if margin < 0.0:
        raise ValueError("margin must be non-negative")
    return box.model_copy(update={"l": box.l + 2.0 * margin, "w": box.w + 2.0 * margin})


def crop_by_box(cloud: PointCloud, box: Box3D) -> PointCloud:
    """Points inside the box, original order preserved"""
    if len(cloud) == 0:
        return cloud
    return cloud.subset(np.flatnonzero(points_in_box(cloud.points, box)))


def resample(cloud: PointCloud, n: int, rng: np.random.Generator) -> PointCloud:
    """
    Resample a cloud to exactly n points

    Args:
        cloud: Non-empty input cloud
        n: Output size
        rng: Seeded generator owned by the caller

    Returns:
        Subsample without replacement when the cloud is large enough, otherwise every point
        once plus random duplicates
    """
    if len(cloud) == 0:
        raise EmptyCloudError()
    if n < 1:
        raise ValueError("n must be at least 1")
    count = len(cloud)
    if count >= n:
        index = rng.choice(count, size=n, replace=False)
    else:
        index = np.concatenate(
            [rng.permutation(count), rng.choice(count, size=n - count, replace=True)]
        )
    return cloud.subset(index)


def _heading_after(transform: RigidTransform, ry: float) -> float:
    direction = transform.rotation @ np.array([math.cos(ry), math.sin(ry), 0.0])
    return normalize_angle(math.atan2(direction[1], direction[0]))


def apply_transform(transform: RigidTransform, cloud: PointCloud) -> PointCloud:
    if len(cloud) == 0:
        return cloud
    return PointCloud(points=transform.apply(cloud.points), intensity=cloud.intensity)


def apply_to_box(transform: RigidTransform, box: Box3D) -> Box3D:
    """Move a box rigidly; heading follows the transform's yaw, sizes are unchanged"""
    center = transform.apply(box.center[None, :])[0]
    return Box3D(
        cx=center[0],
        cy=center[1],
        cz=center[2],
        w=box.w,
        h=box.h,
        l=box.l,
        ry=_heading_after(transform, box.ry),
    )


def center_distance(a: Box3D, b: Box3D, bev: bool = False) -> float:
    delta = a.center - b.center
    if bev:
        return float(math.hypot(delta[0], delta[1]))
    return float(np.linalg.norm(delta))
