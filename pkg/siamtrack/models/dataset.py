"""
Dataset Models
KITTI label rows, tracklets and sampled training pairs
"""
from typing import List, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, model_validator

from siamtrack.models.geometry import Box3D
from siamtrack.models.network import BinTargets

KITTI_LABEL_FIELDS = 17


class FrameLabel(BaseModel):
    """One row of a KITTI tracking label file (camera frame)"""

    frame: int
    track_id: int
    class_name: str
    truncation: float
    occlusion: int
    alpha: float
    bbox: Tuple[float, float, float, float]
    h: float
    w: float
    l: float
    x: float
    y: float
    z: float
    rotation_y: float


class Tracklet(BaseModel):
    """One object's boxes in the LIDAR frame, ordered by frame"""

    track_id: int
    class_name: str
    frames: List[int]
    boxes: List[Box3D]

    @model_validator(mode="after")
    def _ordered(self) -> "Tracklet":
        if len(self.frames) != len(self.boxes):
            raise ValueError("frames and boxes must have the same length")
        if any(b <= a for a, b in zip(self.frames, self.frames[1:])):
            raise ValueError("tracklet frame indices must be strictly increasing")
        return self

    def __len__(self) -> int:
        return len(self.frames)


class TrainingPair(BaseModel):
    """Resampled template/search clouds with search-side supervision"""

    template: np.ndarray
    search: np.ndarray
    gt: Box3D
    foreground: np.ndarray
    targets: Union[BinTargets, np.ndarray]

    model_config = ConfigDict(arbitrary_types_allowed=True)

    @model_validator(mode="after")
    def _shapes(self) -> "TrainingPair":
        if self.template.ndim != 2 or self.template.shape[1] != 3:
            raise ValueError("template must be (N, 3)")
        if self.search.shape != self.template.shape:
            raise ValueError("template and search must have the same shape")
        if len(self.foreground) != len(self.search):
            raise ValueError("foreground mask must cover every search point")
        return self
