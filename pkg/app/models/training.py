"""
Pydantic models for weighted training, evaluation and EWC state
"""
import math
from typing import List, Optional

import numpy as np
from pydantic import BaseModel, Field, field_validator

from app.models.audio import Spectrogram

ORIGINAL_COHORT = "original"


def session_cohort(session_id: int) -> str:
    return f"session-{session_id}"


class WeightedSample(BaseModel):
    """One training item with its loss weight w_i"""
    spectrogram: Spectrogram
    weight: float = Field(default=1.0, ge=0)
    cohort: str = ORIGINAL_COHORT

    @field_validator("weight")
    @classmethod
    def _finite(cls, value):
        if not math.isfinite(value):
            raise ValueError("sample weight must be finite")
        return value

    @property
    def label(self) -> int:
        return self.spectrogram.label


class WeightedDataset(BaseModel):
    """Append-only training multiset; originals carry weight 1"""
    items: List[WeightedSample] = Field(default_factory=list)

    @classmethod
    def from_originals(cls, spectrograms: List[Spectrogram]) -> "WeightedDataset":
        return cls(items=[WeightedSample(spectrogram=s) for s in spectrograms])

    def admit(self, spectrograms: List[Spectrogram], weights: List[float], cohort: str) -> "WeightedDataset":
        """D_new = D + new cohort; existing items are shared, never mutated"""
        if len(spectrograms) != len(weights):
            raise ValueError(f"{len(spectrograms)} samples but {len(weights)} weights")
        added = [
            WeightedSample(spectrogram=s, weight=float(w), cohort=cohort)
            for s, w in zip(spectrograms, weights)
        ]
        return WeightedDataset(items=self.items + added)

    def spectrograms(self) -> List[Spectrogram]:
        return [item.spectrogram for item in self.items]

    def weights(self) -> np.ndarray:
        return np.array([item.weight for item in self.items], dtype=np.float64)

    def labels(self) -> np.ndarray:
        return np.array([item.label for item in self.items], dtype=np.int64)

    def __len__(self) -> int:
        return len(self.items)


class TrainConfig(BaseModel):
    """Optimizer and loop settings"""
    lr: float = Field(default=0.001, gt=0)
    batch_size: int = Field(default=32, ge=1)
    epochs: int = Field(default=10, ge=1)
    seed: int = 0
    lam: float = Field(default=1.0, ge=0, alias="lambda")
    shuffle: bool = True
    weight_floor: Optional[float] = Field(default=1e-3, ge=0)

    class Config:
        extra = "forbid"
        populate_by_name = True


class EpochRecord(BaseModel):
    epoch: int
    train_loss: float
    val_accuracy: Optional[float] = None


class EvalReport(BaseModel):
    """Accuracy, confusion[true][pred] and mean cross-entropy"""
    accuracy: float
    confusion: np.ndarray
    mean_loss: float

    class Config:
        arbitrary_types_allowed = True

    @property
    def total(self) -> int:
        return int(self.confusion.sum())


class FisherDiagonal(BaseModel):
    """Diagonal of the empirical Fisher information"""
    values: np.ndarray
    sample_count: int = Field(..., ge=0)

    class Config:
        arbitrary_types_allowed = True

    @field_validator("values", mode="before")
    @classmethod
    def _non_negative(cls, value):
        array = np.ascontiguousarray(value, dtype=np.float64).reshape(-1)
        if not np.all(np.isfinite(array)) or np.any(array < 0):
            raise ValueError("Fisher diagonal entries must be finite and non-negative")
        return array


class Anchor(BaseModel):
    """Parameters theta* the EWC penalty pulls towards"""
    params_star: np.ndarray
    session_id: int = Field(..., ge=0)

    class Config:
        arbitrary_types_allowed = True

    @field_validator("params_star", mode="before")
    @classmethod
    def _copy_vector(cls, value):
        return np.array(value, dtype=np.float64).reshape(-1)
