"""
Pydantic models for LIME perturbations and explanations
"""
from typing import List, Literal, Union

import numpy as np
from pydantic import BaseModel, Field, field_validator


class LimeConfig(BaseModel):
    """Surrogate-fitting and segmentation settings"""
    n_samples: int = Field(default=256, ge=3)
    sigma: float = Field(default=0.25, gt=0)
    baseline: Union[float, Literal["mean"]] = "mean"
    ridge: float = Field(default=1e-6, ge=0)
    seed: int = 0
    n_segments: int = Field(default=32, ge=1)
    compactness: float = Field(default=10.0, gt=0)
    slic_iters: int = Field(default=10, ge=1)
    batch_size: int = Field(default=64, ge=1)

    class Config:
        extra = "forbid"


class MaskSet(BaseModel):
    """n x S binary matrix; row 0 is the unperturbed instance"""
    masks: np.ndarray

    class Config:
        arbitrary_types_allowed = True

    @field_validator("masks", mode="before")
    @classmethod
    def _as_binary(cls, value):
        array = np.ascontiguousarray(value, dtype=np.uint8)
        if array.ndim != 2:
            raise ValueError(f"mask set must be 2-D, got shape {array.shape}")
        if np.any(array > 1):
            raise ValueError("mask entries must be 0 or 1")
        return array

    @property
    def n(self) -> int:
        return self.masks.shape[0]

    @property
    def n_segments(self) -> int:
        return self.masks.shape[1]


class Explanation(BaseModel):
    """Per-segment surrogate coefficients for one (input, class) pair"""
    scores: np.ndarray
    target_class: int = Field(..., ge=0)
    intercept: float

    class Config:
        arbitrary_types_allowed = True

    @field_validator("scores", mode="before")
    @classmethod
    def _as_finite_vector(cls, value):
        array = np.ascontiguousarray(value, dtype=np.float64).reshape(-1)
        if not np.all(np.isfinite(array)):
            raise ValueError("explanation scores must be finite")
        return array

    @property
    def n_segments(self) -> int:
        return self.scores.shape[0]

    def top_segments(self, k: int = 5) -> List[int]:
        """Ids of the k highest-scoring segments (ties: lower id first)"""
        order = np.argsort(-self.scores, kind="stable")
        return [int(i) for i in order[:k]]
