"""
Network Models
Feature maps, correlation features, proposal codec records and loss breakdowns
"""
from typing import Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from siamtrack.models.geometry import Box3D


class FeatureMap(BaseModel):
    """Per-point features paired row by row with their coordinates"""

    coords: np.ndarray
    features: np.ndarray

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    @model_validator(mode="after")
    def _rows_match(self) -> "FeatureMap":
        if self.coords.ndim != 2 or self.coords.shape[1] != 3:
            raise ValueError(f"coords must be (N, 3), got {self.coords.shape}")
        if self.features.ndim != 2 or len(self.features) != len(self.coords):
            raise ValueError("feature rows must correspond to coordinate rows")
        return self

    def __len__(self) -> int:
        return int(self.coords.shape[0])

    @property
    def width(self) -> int:
        return int(self.features.shape[1])


class CorrelationFeature(BaseModel):
    """Similarity weight psi, one value per search point"""

    psi: np.ndarray

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    @field_validator("psi")
    @classmethod
    def _finite(cls, value: np.ndarray) -> np.ndarray:
        value = np.asarray(value).reshape(-1)
        if not np.all(np.isfinite(value)):
            raise ValueError("correlation feature must be finite")
        return value

    def __len__(self) -> int:
        return int(self.psi.shape[0])


class BinTargets(BaseModel):
    """
    Bin-classification and residual encoding of one box relative to each of N points.

    Center axes are x, y (horizontal) and z (vertical); every array has shape (N,).
    """

    bin_x: np.ndarray
    bin_y: np.ndarray
    bin_z: np.ndarray
    bin_ry: np.ndarray
    res_x: np.ndarray
    res_y: np.ndarray
    res_z: np.ndarray
    res_ry: np.ndarray
    res_w: np.ndarray
    res_h: np.ndarray
    res_l: np.ndarray
    in_range: np.ndarray

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    def __len__(self) -> int:
        return int(self.bin_x.shape[0])

    def bins(self) -> np.ndarray:
        """(N, 4) bin indices for x, y, z, heading"""
        return np.stack([self.bin_x, self.bin_y, self.bin_z, self.bin_ry], axis=1)

    def center_residuals(self) -> np.ndarray:
        """(N, 4) residuals for x, y, z, heading"""
        return np.stack([self.res_x, self.res_y, self.res_z, self.res_ry], axis=1)

    def size_residuals(self) -> np.ndarray:
        """(N, 3) residuals for w, h, l"""
        return np.stack([self.res_w, self.res_h, self.res_l], axis=1)


class Proposal(BaseModel):
    box: Box3D
    score: float = Field(ge=0.0, le=1.0)
    point_index: int


class LossBreakdown(BaseModel):
    cls_loss: float = Field(ge=0.0)
    bin_loss: float = Field(ge=0.0)
    res_loss: float = Field(ge=0.0)
    total: float = Field(ge=0.0)
    n_pos: int = Field(ge=0)
    epoch: Optional[int] = None
