"""
Synthetic Scene Generator
Seeded LIDAR-like sequences: a shell-sampled target on a waypoint path, clutter and ground
"""
import json
import math
import struct
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from siamtrack.core.config import DEFAULT_ANCHOR_SIZES, SyntheticSceneConfig
from siamtrack.core.errors import DataError, ParseError
from siamtrack.core.logging import logger
from siamtrack.models.geometry import Box3D, PointCloud
from siamtrack.models.tracking import TrackingSequence

# surface samples sit slightly inside the box so float32 storage keeps them inside
SURFACE_INSET = 0.98
GROUND_OFFSET = 0.05
BOX_FIELDS = ["cx", "cy", "cz", "w", "h", "l", "ry"]


def sample_box_shell(size: Sequence[float], count: int, rng: np.random.Generator) -> np.ndarray:
    """
    Points on the side and top faces of a (w, h, l) box centered at the origin

    Faces are chosen with probability proportional to their area; the bottom face is left out
    as a sensor would not see it.
    """
    w, h, l = size
    half = np.array([l, w, h]) * SURFACE_INSET / 2.0
    # (fixed axis, sign, area)
    faces = [(0, 1.0, w * h), (0, -1.0, w * h), (1, 1.0, l * h), (1, -1.0, l * h), (2, 1.0, l * w)]
    areas = np.array([face[2] for face in faces])
    choice = rng.choice(len(faces), size=count, p=areas / areas.sum())
    points = rng.uniform(-1.0, 1.0, size=(count, 3)) * half
    for index, (axis, sign, _) in enumerate(faces):
        rows = choice == index
        points[rows, axis] = sign * half[axis]
    return points


def sample_capsule(size: Sequence[float], count: int, rng: np.random.Generator) -> np.ndarray:
    """Points on a capsule inscribed in the box, its axis along the length"""
    w, h, l = size
    radius = min(w, h) * SURFACE_INSET / 2.0
    half_length = max(l * SURFACE_INSET / 2.0 - radius, 0.0)
    cylinder_area = 2.0 * math.pi * radius * 2.0 * half_length
    sphere_area = 4.0 * math.pi * radius**2
    on_cylinder = rng.random(count) < cylinder_area / (cylinder_area + sphere_area)

    directions = rng.standard_normal((count, 3))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    points = directions * radius
    caps = ~on_cylinder
    points[caps, 0] += np.where(points[caps, 0] >= 0.0, half_length, -half_length)

    angle = rng.uniform(0.0, 2.0 * math.pi, size=int(on_cylinder.sum()))
    points[on_cylinder, 0] = rng.uniform(-half_length, half_length, size=len(angle))
    points[on_cylinder, 1] = radius * np.cos(angle)
    points[on_cylinder, 2] = radius * np.sin(angle)
    return points


def pose_points(local: np.ndarray, box: Box3D) -> np.ndarray:
    """Object-frame points (x along the heading) placed at a box pose"""
    c, s = math.cos(box.ry), math.sin(box.ry)
    rotation = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    return local @ rotation.T + box.center


def trajectory(
    waypoints: Sequence[Tuple[float, float]],
    num_frames: int,
    speed_jitter: float,
    rng: np.random.Generator,
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Positions and headings along a waypoint polyline

    Returns:
        (T, 2) horizontal positions and (T,) headings following the path tangent
    """
    path = np.asarray(waypoints, dtype=np.float64).reshape(-1, 2)
    segments = np.diff(path, axis=0)
    lengths = np.linalg.norm(segments, axis=1)
    total = float(lengths.sum())
    if total == 0.0:
        return np.repeat(path[:1], num_frames, axis=0), np.zeros(num_frames)

    steps = 1.0 + speed_jitter * rng.uniform(-1.0, 1.0, size=num_frames - 1)
    travelled = np.concatenate([[0.0], np.cumsum(np.maximum(steps, 0.0))])
    travelled *= total / travelled[-1]
    knots = np.concatenate([[0.0], np.cumsum(lengths)])
    segment = np.clip(np.searchsorted(knots, travelled, side="right") - 1, 0, len(segments) - 1)
    fraction = (travelled - knots[segment]) / np.where(lengths[segment] > 0, lengths[segment], 1.0)
    positions = path[segment] + fraction[:, None] * segments[segment]
    headings = np.arctan2(segments[segment, 1], segments[segment, 0])
    return positions, headings


def _clutter_boxes(
    config: SyntheticSceneConfig,
    target_size: Sequence[float],
    positions: np.ndarray,
    rng: np.random.Generator,
    max_attempts: int = 100,
) -> List[Box3D]:
    center = positions.mean(axis=0)
    target_radius = 0.5 * math.hypot(target_size[0], target_size[2])
    boxes: List[Box3D] = []
    for _ in range(config.clutter_objects):
        for _ in range(max_attempts):
            w, h, l = rng.uniform(0.5, 2.0), rng.uniform(1.0, 2.0), rng.uniform(0.5, 4.0)
            xy = center + rng.uniform(-config.clutter_region, config.clutter_region, size=2)
            clearance = target_radius + 0.5 * math.hypot(w, l)
            if np.min(np.linalg.norm(positions - xy, axis=1)) > clearance:
                boxes.append(
                    Box3D(cx=xy[0], cy=xy[1], cz=h / 2.0, w=w, h=h, l=l, ry=rng.uniform(-math.pi, math.pi))
                )
                break
    return boxes


def generate_synthetic(
    config: SyntheticSceneConfig,
    class_name: str = "car",
    name: Optional[str] = None,
) -> TrackingSequence:
    """
    One seeded synthetic sequence

    The target surface is sampled once in its own frame and posed per frame, so target points
    co-move with the ground-truth box exactly (before dropout). Ground points sit just below
    the target's bottom face; clutter objects are static boxes kept clear of the path.
    """
    rng = np.random.default_rng(config.seed)
    size = tuple(config.object_size) if config.object_size else DEFAULT_ANCHOR_SIZES[class_name]
    w, h, l = size
    sampler = sample_capsule if config.shape == "capsule" else sample_box_shell
    local = sampler(size, config.points_per_object, rng)
    positions, headings = trajectory(config.waypoints, config.num_frames, config.speed_jitter, rng)
    clutter = _clutter_boxes(config, size, positions, rng)
    clutter_count = max(config.points_per_object // 2, 1)
    dropped = int(math.floor(config.dropout * config.points_per_object))

    clouds, boxes = [], []
    for position, heading in zip(positions, headings):
        box = Box3D(cx=position[0], cy=position[1], cz=h / 2.0, w=w, h=h, l=l, ry=heading)
        target = pose_points(local, box)
        if dropped:
            target = np.delete(target, rng.choice(len(target), size=dropped, replace=False), axis=0)
        parts = [target]
        for obstacle in clutter:
            parts.append(pose_points(sample_box_shell(obstacle.size, clutter_count, rng), obstacle))
        if config.ground_points:
            ground = np.empty((config.ground_points, 3))
            ground[:, :2] = position + rng.uniform(
                -config.ground_region, config.ground_region, size=(config.ground_points, 2)
            )
            ground[:, 2] = -GROUND_OFFSET
            parts.append(ground)
        clouds.append(PointCloud(points=np.concatenate(parts, axis=0)))
        boxes.append(box)

    return TrackingSequence(
        name=name or f"synthetic-{config.seed}", class_name=class_name, clouds=clouds, boxes=boxes
    )


def generate_split(
    config: SyntheticSceneConfig, count: int, base_seed: int, class_name: str = "car", prefix: str = "synthetic"
) -> List[TrackingSequence]:
    """
    `count` sequences with seeds base_seed, base_seed + 1, ...; each path is rotated about its
    first waypoint by a seeded random angle
    """
    sequences = []
    for index in range(count):
        seed = base_seed + index
        angle = np.random.default_rng(seed).uniform(-math.pi, math.pi)
        c, s = math.cos(angle), math.sin(angle)
        path = np.asarray(config.waypoints, dtype=np.float64).reshape(-1, 2)
        rotated = (path - path[0]) @ np.array([[c, s], [-s, c]]) + path[0]
        scene = config.model_copy(update={"seed": seed, "waypoints": [tuple(p) for p in rotated]})
        sequences.append(generate_synthetic(scene, class_name, name=f"{prefix}-{seed:04d}"))
    return sequences


def write_frame(path: Path, cloud: PointCloud) -> Path:
    """uint32 little-endian count, then little-endian float32 (x, y, z) triples"""
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as handle:
        handle.write(struct.pack("<I", len(cloud)))
        handle.write(cloud.points.astype("<f4").tobytes())
    return path


def read_frame(path: Path) -> PointCloud:
    data = Path(path).read_bytes()
    if len(data) < 4:
        raise ParseError("frame file is too short for its point count", path=path, offset=0)
    (count,) = struct.unpack_from("<I", data, 0)
    expected = 4 + 12 * count
    if len(data) != expected:
        raise ParseError(
            f"frame declares {count} points but holds {len(data) - 4} payload bytes",
            path=path,
            offset=min(len(data), expected),
        )
    points = np.frombuffer(data, dtype="<f4", offset=4).reshape(-1, 3).astype(np.float64)
    return PointCloud(points=points)


def write_synthetic_sequence(
    sequence: TrackingSequence, out_dir: Path, config: Optional[SyntheticSceneConfig] = None
) -> Path:
    """config.json, gt.csv and frames/<index>.bin under out_dir"""
    out_dir = Path(out_dir)
    (out_dir / "frames").mkdir(parents=True, exist_ok=True)
    record = {"name": sequence.name, "class_name": sequence.class_name, "frames": len(sequence)}
    if config is not None:
        record["scene"] = config.model_dump(mode="json")
    (out_dir / "config.json").write_text(json.dumps(record, indent=2))
    gt = pd.DataFrame([box.model_dump() for box in sequence.boxes], columns=BOX_FIELDS)
    gt.insert(0, "frame", range(len(sequence)))
    gt.to_csv(out_dir / "gt.csv", index=False)
    for index, cloud in enumerate(sequence.clouds):
        write_frame(out_dir / "frames" / f"{index:06d}.bin", cloud)
    return out_dir


def load_synthetic_sequence(directory: Path) -> TrackingSequence:
    directory = Path(directory)
    config_path, gt_path = directory / "config.json", directory / "gt.csv"
    if not config_path.exists() or not gt_path.exists():
        raise DataError(f"{directory} is not a synthetic sequence (config.json/gt.csv missing)")
    try:
        record = json.loads(config_path.read_text())
        gt = pd.read_csv(gt_path)
        boxes = [Box3D(**{field: row[field] for field in BOX_FIELDS}) for _, row in gt.iterrows()]
        clouds = [read_frame(directory / "frames" / f"{int(frame):06d}.bin") for frame in gt["frame"]]
    except (KeyError, ValueError, OSError) as e:
        logger.error("synthetic_sequence_load_failed", path=str(directory), exc_info=True)
        raise DataError(f"cannot read synthetic sequence {directory}: {e}") from e
    return TrackingSequence(
        name=record.get("name", directory.name),
        class_name=record.get("class_name", "car"),
        clouds=clouds,
        boxes=boxes,
    )


def load_synthetic_split(directory: Path) -> List[TrackingSequence]:
    """Every sequence directory below `directory`, sorted by name"""
    directory = Path(directory)
    if (directory / "gt.csv").exists():
        return [load_synthetic_sequence(directory)]
    found = sorted(path.parent for path in directory.glob("*/gt.csv"))
    if not found:
        raise DataError(f"no synthetic sequences under {directory}")
    return [load_synthetic_sequence(path) for path in found]
