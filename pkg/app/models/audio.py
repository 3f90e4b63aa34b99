"""
Pydantic models for audio clips and spectrogram datasets
"""
from typing import List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, Field, field_validator, model_validator

SAMPLE_RATE = 16000
CLIP_LENGTH = 16000


class AudioClip(BaseModel):
    """Mono PCM clip scaled to [-1, 1]"""
    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE
    label: Optional[int] = None
    speaker_id: str = ""
    source_id: str = ""

    class Config:
        arbitrary_types_allowed = True

    @field_validator("samples", mode="before")
    @classmethod
    def _as_float_vector(cls, value):
        return np.ascontiguousarray(value, dtype=np.float64).reshape(-1)


class StftConfig(BaseModel):
    """Short-time Fourier transform settings"""
    n_fft: int = Field(default=256, ge=2)
    hop: int = Field(default=128, ge=1)
    n_bins: int = Field(default=128, ge=1)
    n_frames: int = Field(default=128, ge=1)


class Spectrogram(BaseModel):
    """
    F x T non-negative magnitude image with provenance

    Values are held as C-contiguous float32 in memory, the same precision the
    cache stores, so a cache round trip is bit-exact. Models widen to float64
    when they stack inputs.
    """
    values: np.ndarray
    label: int = Field(..., ge=0)
    speaker_id: str = ""
    source_id: str = ""

    class Config:
        arbitrary_types_allowed = True

    @field_validator("values", mode="before")
    @classmethod
    def _as_float32_matrix(cls, value):
        array = np.ascontiguousarray(value, dtype=np.float32)
        if array.ndim != 2:
            raise ValueError(f"spectrogram must be 2-D, got shape {array.shape}")
        if not np.all(np.isfinite(array)):
            raise ValueError("spectrogram contains non-finite values")
        if np.any(array < 0):
            raise ValueError("spectrogram contains negative values")
        return array

    @property
    def shape(self) -> Tuple[int, int]:
        return self.values.shape

    def with_values(self, values: np.ndarray) -> "Spectrogram":
        """Copy with new pixel values, same provenance"""
        return Spectrogram(
            values=values,
            label=self.label,
            speaker_id=self.speaker_id,
            source_id=self.source_id,
        )


class DatasetSplit(BaseModel):
    """Speaker-disjoint train / validation / test partition"""
    train: List[Spectrogram] = Field(default_factory=list)
    validation: List[Spectrogram] = Field(default_factory=list)
    test: List[Spectrogram] = Field(default_factory=list)
    ratios: Tuple[float, float, float] = (0.8, 0.1, 0.1)

    @model_validator(mode="after")
    def _speakers_disjoint(self):
        groups = [self.speakers(part) for part in (self.train, self.validation, self.test)]
        for i in range(3):
            for j in range(i + 1, 3):
                shared = groups[i] & groups[j]
                if shared:
                    raise ValueError(f"speakers shared between splits: {sorted(shared)[:5]}")
        return self

    @staticmethod
    def speakers(items: List[Spectrogram]) -> set:
        return {item.speaker_id for item in items}
