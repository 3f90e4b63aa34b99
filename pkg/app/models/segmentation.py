"""
Pydantic models for superpixel segmentations
"""
from typing import List

import numpy as np
from pydantic import BaseModel, Field, field_validator, model_validator


class SegmentMap(BaseModel):
    """Per-pixel segment labels 0..n_segments-1"""
    labels: np.ndarray
    n_segments: int = Field(..., ge=1)
    objective_history: List[float] = Field(default_factory=list)

    class Config:
        arbitrary_types_allowed = True

    @field_validator("labels", mode="before")
    @classmethod
    def _as_int_matrix(cls, value):
        array = np.ascontiguousarray(value, dtype=np.int64)
        if array.ndim != 2:
            raise ValueError(f"segment labels must be 2-D, got shape {array.shape}")
        return array

    @model_validator(mode="after")
    def _labels_dense(self):
        present = np.unique(self.labels)
        if present.size != self.n_segments or present[0] != 0 or present[-1] != self.n_segments - 1:
            raise ValueError(
                f"labels must be exactly 0..{self.n_segments - 1}, found {present.size} distinct labels"
            )
        return self

    @property
    def shape(self):
        return self.labels.shape
