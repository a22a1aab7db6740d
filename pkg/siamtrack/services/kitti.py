"""
KITTI Tracking Ingestion
Velodyne scans, label files, calibration and tracklet assembly
"""
import math
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from siamtrack.core.errors import DataError, ParseError
from siamtrack.core.logging import logger
from siamtrack.models.dataset import KITTI_LABEL_FIELDS, FrameLabel, Tracklet
from siamtrack.models.geometry import ORTHONORMAL_TOLERANCE, Box3D, PointCloud, RigidTransform, normalize_angle
from siamtrack.models.tracking import TrackingSequence

SCAN_RECORD_BYTES = 16
IGNORED_CLASSES = {"dontcare"}


def read_velodyne(path: Path) -> PointCloud:
    """Little-endian float32 (x, y, z, intensity) records"""
    path = Path(path)
    if not path.exists():
        raise DataError(f"velodyne scan not found: {path}")
    size = path.stat().st_size
    if size % SCAN_RECORD_BYTES:
        raise ParseError(
            f"scan length {size} is not a multiple of {SCAN_RECORD_BYTES} bytes",
            path=path,
            offset=size - size % SCAN_RECORD_BYTES,
        )
    scan = np.fromfile(path, dtype="<f4").reshape(-1, 4).astype(np.float64)
    return PointCloud(points=scan[:, :3], intensity=scan[:, 3])


def write_velodyne(path: Path, cloud: PointCloud) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    intensity = cloud.intensity if cloud.intensity is not None else np.zeros(len(cloud))
    np.hstack([cloud.points, intensity[:, None]]).astype("<f4").tofile(path)
    return path


def parse_label_row(fields: Sequence[str], path: Optional[Path] = None, row: Optional[int] = None) -> FrameLabel:
    if len(fields) != KITTI_LABEL_FIELDS:
        raise ParseError(
            f"expected {KITTI_LABEL_FIELDS} label fields, found {len(fields)}", path=path, row=row
        )
    try:
        values = [float(value) for value in fields[3:]]
        return FrameLabel(
            frame=int(fields[0]),
            track_id=int(fields[1]),
            class_name=fields[2],
            truncation=values[0],
            occlusion=int(values[1]),
            alpha=values[2],
            bbox=tuple(values[3:7]),
            h=values[7],
            w=values[8],
            l=values[9],
            x=values[10],
            y=values[11],
            z=values[12],
            rotation_y=values[13],
        )
    except ValueError as e:
        raise ParseError(f"malformed label value: {e}", path=path, row=row) from e


def read_labels(path: Path) -> List[FrameLabel]:
    path = Path(path)
    if not path.exists():
        raise DataError(f"label file not found: {path}")
    labels = []
    with open(path, "r") as handle:
        for row, line in enumerate(handle):
            fields = line.split()
            if fields:
                labels.append(parse_label_row(fields, path=path, row=row))
    return labels


def _orthonormalize(matrix: np.ndarray, name: str) -> np.ndarray:
    u, _, vt = np.linalg.svd(matrix)
    fixed = u @ vt
    if np.linalg.det(fixed) < 0:
        u[:, -1] *= -1.0
        fixed = u @ vt
    deviation = float(np.abs(matrix - fixed).max())
    if deviation > ORTHONORMAL_TOLERANCE:
        logger.info("calibration_rotation_orthonormalized", matrix=name, deviation=deviation)
    return fixed


def read_calibration(path: Path) -> RigidTransform:
    """
    velo -> rectified camera transform from a tracking calibration file

    Args:
        path: calib/<seq>.txt with `R_rect` (3x3) and `Tr_velo_cam` (3x4) rows; keys may carry
            a trailing colon (`R0_rect:` / `Tr_velo_to_cam:` spellings are accepted as well)

    Returns:
        R_rect composed after Tr_velo_cam
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"calibration file not found: {path}")
    entries: Dict[str, np.ndarray] = {}
    with open(path, "r") as handle:
        for row, line in enumerate(handle):
            fields = line.split()
            if not fields:
                continue
            key = fields[0].rstrip(":")
            try:
                entries[key] = np.array([float(value) for value in fields[1:]])
            except ValueError as e:
                raise ParseError(f"malformed calibration value: {e}", path=path, row=row) from e

    rect = entries.get("R_rect", entries.get("R0_rect"))
    velo_cam = entries.get("Tr_velo_cam", entries.get("Tr_velo_to_cam"))
    if rect is None or velo_cam is None:
        raise ParseError("calibration needs R_rect and Tr_velo_cam entries", path=path)
    if rect.size != 9 or velo_cam.size != 12:
        raise ParseError("R_rect must hold 9 values and Tr_velo_cam 12", path=path)
    velo_cam = velo_cam.reshape(3, 4)
    rectify = RigidTransform(rotation=_orthonormalize(rect.reshape(3, 3), "R_rect"), translation=np.zeros(3))
    extrinsic = RigidTransform(
        rotation=_orthonormalize(velo_cam[:, :3], "Tr_velo_cam"), translation=velo_cam[:, 3]
    )
    return rectify.compose(extrinsic)


def label_to_box(label: FrameLabel, cam_to_velo: RigidTransform) -> Box3D:
    """
    Camera-frame label -> LIDAR-frame box

    The camera-frame location is the bottom center (camera y points down), so the center is
    lifted by h/2 before transforming. The heading follows the transformed direction vector.
    """
    center_cam = np.array([label.x, label.y - label.h / 2.0, label.z])
    center = cam_to_velo.apply(center_cam[None, :])[0]
    direction_cam = np.array([math.cos(label.rotation_y), 0.0, -math.sin(label.rotation_y)])
    direction = cam_to_velo.rotation @ direction_cam
    return Box3D(
        cx=center[0],
        cy=center[1],
        cz=center[2],
        w=label.w,
        h=label.h,
        l=label.l,
        ry=normalize_angle(math.atan2(direction[1], direction[0])),
    )


def _class_set(class_filter: Union[str, Iterable[str], None]) -> Optional[set]:
    if class_filter is None:
        return None
    if isinstance(class_filter, str):
        class_filter = [class_filter]
    return {name.lower() for name in class_filter}


def build_tracklets(
    labels: Sequence[FrameLabel],
    class_filter: Union[str, Iterable[str], None] = None,
    cam_to_velo: Optional[RigidTransform] = None,
) -> List[Tracklet]:
    """
    Group label rows into per-object tracklets

    Args:
        labels: Parsed label rows of one sequence
        class_filter: Class name(s) to keep, case-insensitive; None keeps every object class
        cam_to_velo: Camera -> LIDAR transform (identity when omitted)

    Returns:
        Tracklets ordered by track id, each sorted by frame, single-frame tracks dropped
    """
    wanted = _class_set(class_filter)
    cam_to_velo = cam_to_velo or RigidTransform.identity()
    grouped: Dict[int, List[FrameLabel]] = {}
    for label in labels:
        name = label.class_name.lower()
        if name in IGNORED_CLASSES or label.track_id < 0:
            continue
        if wanted is not None and name not in wanted:
            continue
        grouped.setdefault(label.track_id, []).append(label)

    tracklets = []
    for track_id in sorted(grouped):
        rows = sorted(grouped[track_id], key=lambda label: label.frame)
        if len(rows) < 2:
            continue
        tracklets.append(
            Tracklet(
                track_id=track_id,
                class_name=rows[0].class_name.lower(),
                frames=[label.frame for label in rows],
                boxes=[label_to_box(label, cam_to_velo) for label in rows],
            )
        )
    return tracklets


def compute_anchor_sizes(tracklets: Sequence[Tracklet]) -> Tuple[float, float, float]:
    """Mean (w, h, l) over every ground-truth box"""
    sizes = [box.size for tracklet in tracklets for box in tracklet.boxes]
    if not sizes:
        raise DataError("cannot estimate anchor sizes without ground-truth boxes")
    mean = np.mean(sizes, axis=0)
    return float(mean[0]), float(mean[1]), float(mean[2])


class KittiSequence:
    """
    One KITTI tracking sequence

    Scans are read on demand; labels and calibration are parsed up front.
    """

    def __init__(self, root: Path, sequence: int):
        self.root = Path(root)
        self.sequence = sequence
        self.name = f"{sequence:04d}"
        self.scan_dir = self.root / "velodyne" / self.name
        if not self.scan_dir.is_dir():
            raise DataError(f"velodyne directory not found: {self.scan_dir}")
        self.labels = read_labels(self.root / "label_02" / f"{self.name}.txt")
        self.velo_to_cam = read_calibration(self.root / "calib" / f"{self.name}.txt")
        self.cam_to_velo = self.velo_to_cam.inverse()
        self.frame_ids = sorted(int(path.stem) for path in self.scan_dir.glob("*.bin"))

    def __len__(self) -> int:
        return len(self.frame_ids)

    def scan(self, frame: int) -> PointCloud:
        return read_velodyne(self.scan_dir / f"{frame:06d}.bin")

    def frame(self, frame: int) -> Tuple[PointCloud, List[FrameLabel], RigidTransform]:
        labels = [label for label in self.labels if label.frame == frame]
        return self.scan(frame), labels, self.velo_to_cam

    def tracklets(self, class_filter: Union[str, Iterable[str], None] = None) -> List[Tracklet]:
        return build_tracklets(self.labels, class_filter, self.cam_to_velo)

    def tracking_sequence(self, tracklet: Tracklet) -> TrackingSequence:
        clouds = [self.scan(frame) for frame in tracklet.frames]
        return TrackingSequence(
            name=f"{self.name}-{tracklet.track_id}",
            class_name=tracklet.class_name,
            clouds=clouds,
            boxes=tracklet.boxes,
        )


def load_kitti_sequence(root: Path, sequence: int) -> List[Tuple[PointCloud, List[FrameLabel], RigidTransform]]:
    """Every frame of a sequence as (scan, labels, velo -> cam transform)"""
    try:
        kitti = KittiSequence(root, sequence)
        frames = [kitti.frame(frame) for frame in kitti.frame_ids]
    except DataError:
        logger.error("kitti_sequence_load_failed", root=str(root), sequence=sequence, exc_info=True)
        raise
    logger.info("kitti_sequence_loaded", sequence=sequence, frames=len(frames))
    return frames


def load_kitti_tracklets(
    root: Path, sequences: Sequence[int], class_filter: Union[str, Iterable[str], None]
) -> List[Tuple[KittiSequence, Tracklet]]:
    pairs = []
    for sequence in sequences:
        kitti = KittiSequence(root, sequence)
        pairs.extend((kitti, tracklet) for tracklet in kitti.tracklets(class_filter))
    logger.info("kitti_tracklets_loaded", sequences=list(sequences), tracklets=len(pairs))
    return pairs


class KittiTrack:
    """A tracklet whose scans are read when a frame is requested"""

    def __init__(self, sequence: KittiSequence, tracklet: Tracklet):
        self.sequence = sequence
        self.tracklet = tracklet
        self.boxes = tracklet.boxes
        self.name = f"{sequence.name}-{tracklet.track_id}"
        self.class_name = tracklet.class_name

    def __len__(self) -> int:
        return len(self.tracklet)

    def cloud(self, index: int) -> PointCloud:
        return self.sequence.scan(self.tracklet.frames[index])


# camera axes: x right, y down, z forward
CAMERA_FROM_LIDAR = RigidTransform(
    rotation=np.array([[0.0, -1.0, 0.0], [0.0, 0.0, -1.0], [1.0, 0.0, 0.0]]), translation=np.zeros(3)
)


def box_to_label(box: Box3D, velo_to_cam: RigidTransform, frame: int, track_id: int, class_name: str) -> FrameLabel:
    """LIDAR-frame box -> camera-frame label row; the image-plane fields are left at zero"""
    center = velo_to_cam.apply(np.array([[box.cx, box.cy, box.cz]]))[0]
    direction = velo_to_cam.rotation @ np.array([math.cos(box.ry), math.sin(box.ry), 0.0])
    return FrameLabel(
        frame=frame,
        track_id=track_id,
        class_name=class_name.capitalize(),
        truncation=0.0,
        occlusion=0,
        alpha=0.0,
        bbox=(0.0, 0.0, 0.0, 0.0),
        h=box.h,
        w=box.w,
        l=box.l,
        x=float(center[0]),
        y=float(center[1] + box.h / 2.0),
        z=float(center[2]),
        rotation_y=normalize_angle(math.atan2(-direction[2], direction[0])),
    )


def write_labels(path: Path, labels: Sequence[FrameLabel]) -> Path:
    """One 17-field row per label; floats use their shortest exact representation"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    rows = []
    for label in sorted(labels, key=lambda item: (item.frame, item.track_id)):
        values = [
            label.truncation,
            label.occlusion,
            label.alpha,
            *label.bbox,
            label.h,
            label.w,
            label.l,
            label.x,
            label.y,
            label.z,
            label.rotation_y,
        ]
        rows.append(" ".join([str(label.frame), str(label.track_id), label.class_name] + [repr(v) for v in values]))
    path.write_text("\n".join(rows) + "\n")
    return path


def write_calibration(path: Path, velo_to_cam: RigidTransform) -> Path:
    """Calibration file with an identity R_rect and the given Tr_velo_cam"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    extrinsic = np.hstack([velo_to_cam.rotation, velo_to_cam.translation[:, None]])
    lines = [
        "R_rect " + " ".join(repr(float(v)) for v in np.eye(3).reshape(-1)),
        "Tr_velo_cam " + " ".join(repr(float(v)) for v in extrinsic.reshape(-1)),
    ]
    path.write_text("\n".join(lines) + "\n")
    return path


def write_kitti_sequence(
    root: Path,
    sequence: int,
    tracks: Sequence[TrackingSequence],
    velo_to_cam: Optional[RigidTransform] = None,
) -> Path:
    """
    Write time-aligned tracks as one KITTI tracking sequence

    Frame f of the sequence is the union of every track's frame f; track k gets id k.
    """
    root = Path(root)
    velo_to_cam = velo_to_cam or CAMERA_FROM_LIDAR
    name = f"{sequence:04d}"
    frames = min(len(track) for track in tracks)
    labels = []
    for frame in range(frames):
        clouds = [track.clouds[frame] for track in tracks]
        write_velodyne(root / "velodyne" / name / f"{frame:06d}.bin", PointCloud.concatenate(clouds))
        for track_id, track in enumerate(tracks):
            labels.append(box_to_label(track.boxes[frame], velo_to_cam, frame, track_id, track.class_name))
    write_labels(root / "label_02" / f"{name}.txt", labels)
    write_calibration(root / "calib" / f"{name}.txt", velo_to_cam)
    logger.info("kitti_sequence_written", root=str(root), sequence=sequence, frames=frames, tracks=len(tracks))
    return root
