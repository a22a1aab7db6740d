"""
Tracking Models
Tracker state, per-frame results, sequences and OPE reports
"""
from typing import Dict, List, Optional

from pydantic import BaseModel, ConfigDict, Field, model_validator

from siamtrack.models.geometry import Box3D, PointCloud
from siamtrack.models.network import FeatureMap


class TrackerState(BaseModel):
    """Closed-loop state of one tracked target"""

    template: FeatureMap
    first_crop: PointCloud
    first_box: Box3D
    box: Box3D
    score: float = 1.0
    frames_since_good_score: int = 0
    frame_index: int = 0
    widen_next: bool = False

    model_config = ConfigDict(arbitrary_types_allowed=True)


class FrameResult(BaseModel):
    frame: int
    box: Box3D
    score: float = Field(ge=0.0, le=1.0)
    search_points: int = Field(ge=0)
    fallback: bool = False
    pre_ms: float = Field(default=0.0, ge=0.0)
    infer_ms: float = Field(default=0.0, ge=0.0)
    post_ms: float = Field(default=0.0, ge=0.0)

    @property
    def total_ms(self) -> float:
        return self.pre_ms + self.infer_ms + self.post_ms

    def to_row(self) -> Dict:
        """Flat record for result streams"""
        row = {"frame": self.frame}
        row.update(self.box.model_dump())
        row.update(
            score=self.score,
            search_points=self.search_points,
            fallback=self.fallback,
            pre_ms=self.pre_ms,
            infer_ms=self.infer_ms,
            post_ms=self.post_ms,
        )
        return row


class TrackingSequence(BaseModel):
    """
    One target's frames. `boxes` holds the ground truth of every frame; the tracker only
    ever receives boxes[0], the rest is for scoring.
    """

    name: str
    class_name: str = "car"
    clouds: List[PointCloud]
    boxes: List[Box3D]

    model_config = ConfigDict(arbitrary_types_allowed=True)

    @model_validator(mode="after")
    def _aligned(self) -> "TrackingSequence":
        if len(self.clouds) != len(self.boxes):
            raise ValueError("every frame needs a ground-truth box")
        if not self.clouds:
            raise ValueError("a sequence needs at least one frame")
        return self

    def __len__(self) -> int:
        return len(self.clouds)

    def cloud(self, index: int) -> PointCloud:
        return self.clouds[index]


class SparsityBucket(BaseModel):
    bucket: str
    sequences: int
    frames: int
    success_3d: float
    precision_3d: float


class OPEReport(BaseModel):
    """One-pass evaluation summary; AUC values are percentages"""

    label: str = ""
    class_name: Optional[str] = None
    success_3d: float = Field(ge=0.0, le=100.0)
    precision_3d: float = Field(ge=0.0, le=100.0)
    success_bev: float = Field(ge=0.0, le=100.0)
    precision_bev: float = Field(ge=0.0, le=100.0)
    frames: int = Field(ge=0)
    sequences: int = Field(ge=0)
    failed_sequences: int = Field(default=0, ge=0)
    fallback_frames: int = Field(default=0, ge=0)
    mean_pre_ms: float = Field(default=0.0, ge=0.0)
    mean_infer_ms: float = Field(default=0.0, ge=0.0)
    mean_post_ms: float = Field(default=0.0, ge=0.0)
    sparsity: List[SparsityBucket] = Field(default_factory=list)

    @property
    def fps(self) -> float:
        total = self.mean_pre_ms + self.mean_infer_ms + self.mean_post_ms
        return 1000.0 / total if total > 0 else 0.0

    def to_row(self) -> Dict:
        row = self.model_dump(exclude={"sparsity"})
        row["fps"] = self.fps
        return row
