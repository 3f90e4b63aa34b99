"""
Pydantic models for incremental sessions and checkpoints
"""
from enum import Enum
from typing import List, Optional

import numpy as np
from pydantic import BaseModel, Field, field_validator

from app.models.audio import Spectrogram

CHECKPOINT_VERSION = 1


class TrainingMode(str, Enum):
    """Table columns: traditional loss, weighted loss, weighted loss + EWC"""
    TRADITIONAL = "traditional"
    WEIGHTED = "weighted"
    WEIGHTED_EWC = "weighted_ewc"


class WeightMetric(str, Enum):
    """Distance between predicted-class and true-class explanations"""
    EUCLIDEAN = "euclidean"
    MANHATTAN = "manhattan"
    COSINE = "cosine"


class SessionPlan(BaseModel):
    """Ordered validation chunks D^{v_1}..D^{v_n} plus the fixed test set"""
    chunks: List[List[Spectrogram]] = Field(default_factory=list)
    test_set: List[Spectrogram] = Field(default_factory=list)
    lam: float = Field(default=1.0, ge=0)
    metric: WeightMetric = WeightMetric.EUCLIDEAN
    sqrt_weights: bool = False
    fisher_fraction: float = Field(default=0.05, gt=0, le=1)
    seed: int = 0

    @property
    def n_sessions(self) -> int:
        return len(self.chunks)


class SessionRecord(BaseModel):
    """One row of the session log"""
    session_id: int
    mode: TrainingMode
    lam: float
    seed: int
    train_size: int
    added_count: int
    mean_new_weight: float
    test_accuracy: float
    test_loss: float
    checkpoint_path: Optional[str] = None
    retention_accuracy: Optional[float] = None

    class Config:
        use_enum_values = True


class SessionRun(BaseModel):
    """All records of one run_incremental call"""
    records: List[SessionRecord] = Field(default_factory=list)
    session_csv: Optional[str] = None


class Checkpoint(BaseModel):
    """Persisted model (+ optional EWC state) after a session"""
    arch: str
    params: np.ndarray
    session_id: int = Field(default=0, ge=0)
    anchor: Optional[np.ndarray] = None
    fisher: Optional[np.ndarray] = None
    version: int = CHECKPOINT_VERSION

    class Config:
        arbitrary_types_allowed = True

    @field_validator("params", "anchor", "fisher", mode="before")
    @classmethod
    def _as_vector(cls, value):
        if value is None:
            return None
        return np.ascontiguousarray(value, dtype=np.float64).reshape(-1)

    @property
    def has_ewc_state(self) -> bool:
        return self.anchor is not None and self.fisher is not None
