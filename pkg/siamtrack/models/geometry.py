"""
Geometry Models
Oriented boxes, point clouds and rigid transforms in the LIDAR frame (x forward, y left, z up)
"""
import math
from typing import Optional, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, field_validator, model_validator

ORTHONORMAL_TOLERANCE = 1e-6


def normalize_angle(angle: float) -> float:
    """Map an angle to (-pi, pi]"""
    wrapped = math.remainder(float(angle), 2.0 * math.pi)
    if wrapped <= -math.pi:
        wrapped += 2.0 * math.pi
    return wrapped


def normalize_angles(angles: np.ndarray) -> np.ndarray:
    """Vectorized normalize_angle"""
    wrapped = np.remainder(angles + np.pi, 2.0 * np.pi) - np.pi
    return np.where(wrapped <= -np.pi, wrapped + 2.0 * np.pi, wrapped)


class Box3D(BaseModel):
    """
    Oriented 3D box: center (cx, cy, cz), size (w, h, l) and heading ry about z.

    Length l runs along the heading, width w across it, height h is vertical.
    """

    cx: float
    cy: float
    cz: float
    w: float
    h: float
    l: float
    ry: float

    model_config = ConfigDict(frozen=True)

    @field_validator("cx", "cy", "cz", "w", "h", "l", "ry")
    @classmethod
    def _finite(cls, value: float) -> float:
        if not math.isfinite(value):
            raise ValueError("box fields must be finite")
        return float(value)

    @field_validator("w", "h", "l")
    @classmethod
    def _positive(cls, value: float) -> float:
        if value <= 0.0:
            raise ValueError("box sizes must be strictly positive")
        return value

    @field_validator("ry")
    @classmethod
    def _normalize(cls, value: float) -> float:
        return normalize_angle(value)

    @property
    def center(self) -> np.ndarray:
        return np.array([self.cx, self.cy, self.cz], dtype=np.float64)

    @property
    def size(self) -> np.ndarray:
        return np.array([self.w, self.h, self.l], dtype=np.float64)

    @property
    def volume(self) -> float:
        return self.w * self.h * self.l

    @property
    def bev_area(self) -> float:
        return self.w * self.l

    def to_array(self) -> np.ndarray:
        """(cx, cy, cz, w, h, l, ry) as float64"""
        return np.array(
            [self.cx, self.cy, self.cz, self.w, self.h, self.l, self.ry], dtype=np.float64
        )

    @classmethod
    def from_array(cls, values: Sequence[float]) -> "Box3D":
        cx, cy, cz, w, h, l, ry = (float(v) for v in values)
        return cls(cx=cx, cy=cy, cz=cz, w=w, h=h, l=l, ry=ry)

    def corners_bev(self) -> np.ndarray:
        """Footprint corners (4, 2), counter-clockwise"""
        half_l, half_w = self.l / 2.0, self.w / 2.0
        local = np.array(
            [[half_l, half_w], [-half_l, half_w], [-half_l, -half_w], [half_l, -half_w]]
        )
        c, s = math.cos(self.ry), math.sin(self.ry)
        rotation = np.array([[c, -s], [s, c]])
        return local @ rotation.T + np.array([self.cx, self.cy])

    def with_size(self, w: float, h: float, l: float) -> "Box3D":
        return self.model_copy(update={"w": float(w), "h": float(h), "l": float(l)})


class PointCloud(BaseModel):
    """N x 3 points in meters with optional per-point intensity"""

    points: np.ndarray
    intensity: Optional[np.ndarray] = None

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    @field_validator("points", mode="before")
    @classmethod
    def _as_points(cls, value) -> np.ndarray:
        points = np.asarray(value, dtype=np.float64)
        if points.size == 0:
            return np.zeros((0, 3), dtype=np.float64)
        if points.ndim != 2 or points.shape[1] != 3:
            raise ValueError(f"points must have shape (N, 3), got {points.shape}")
        if not np.all(np.isfinite(points)):
            raise ValueError("point coordinates must be finite")
        return points

    @field_validator("intensity", mode="before")
    @classmethod
    def _as_intensity(cls, value) -> Optional[np.ndarray]:
        if value is None:
            return None
        return np.asarray(value, dtype=np.float64).reshape(-1)

    @model_validator(mode="after")
    def _check_lengths(self) -> "PointCloud":
        if self.intensity is not None and len(self.intensity) != len(self.points):
            raise ValueError("intensity length must match the point count")
        return self

    def __len__(self) -> int:
        return int(self.points.shape[0])

    def subset(self, index: np.ndarray) -> "PointCloud":
        intensity = self.intensity[index] if self.intensity is not None else None
        return PointCloud(points=self.points[index], intensity=intensity)

    @classmethod
    def empty(cls) -> "PointCloud":
        return cls(points=np.zeros((0, 3)))

    @classmethod
    def concatenate(cls, clouds: Sequence["PointCloud"]) -> "PointCloud":
        points = np.concatenate([c.points for c in clouds], axis=0) if clouds else np.zeros((0, 3))
        if clouds and all(c.intensity is not None for c in clouds):
            intensity = np.concatenate([c.intensity for c in clouds])
        else:
            intensity = None
        return cls(points=points, intensity=intensity)


class RigidTransform(BaseModel):
    """Proper rotation plus translation: p -> R p + t"""

    rotation: np.ndarray
    translation: np.ndarray

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    @field_validator("rotation", mode="before")
    @classmethod
    def _as_rotation(cls, value) -> np.ndarray:
        rotation = np.asarray(value, dtype=np.float64)
        if rotation.shape != (3, 3):
            raise ValueError(f"rotation must be 3x3, got {rotation.shape}")
        if not np.allclose(rotation @ rotation.T, np.eye(3), atol=ORTHONORMAL_TOLERANCE):
            raise ValueError("rotation is not orthonormal")
        if abs(np.linalg.det(rotation) - 1.0) > ORTHONORMAL_TOLERANCE:
            raise ValueError("rotation must have determinant +1")
        return rotation

    @field_validator("translation", mode="before")
    @classmethod
    def _as_translation(cls, value) -> np.ndarray:
        translation = np.asarray(value, dtype=np.float64).reshape(-1)
        if translation.shape != (3,):
            raise ValueError(f"translation must be a 3-vector, got {translation.shape}")
        return translation

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls(rotation=np.eye(3), translation=np.zeros(3))

    @classmethod
    def from_matrix(cls, matrix: np.ndarray) -> "RigidTransform":
        matrix = np.asarray(matrix, dtype=np.float64)
        return cls(rotation=matrix[:3, :3], translation=matrix[:3, 3])

    @classmethod
    def from_yaw(cls, yaw: float, translation: Sequence[float] = (0.0, 0.0, 0.0)) -> "RigidTransform":
        c, s = math.cos(yaw), math.sin(yaw)
        rotation = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
        return cls(rotation=rotation, translation=np.asarray(translation, dtype=np.float64))

    def matrix(self) -> np.ndarray:
        out = np.eye(4)
        out[:3, :3] = self.rotation
        out[:3, 3] = self.translation
        return out

    def apply(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points, dtype=np.float64) @ self.rotation.T + self.translation

    def compose(self, first: "RigidTransform") -> "RigidTransform":
        """self after first"""
        return RigidTransform(
            rotation=self.rotation @ first.rotation,
            translation=self.rotation @ first.translation + self.translation,
        )

    def inverse(self) -> "RigidTransform":
        rotation = self.rotation.T
        return RigidTransform(rotation=rotation, translation=-rotation @ self.translation)
