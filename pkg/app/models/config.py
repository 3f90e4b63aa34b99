"""
Pydantic models for run configuration files
"""
from pathlib import Path
from typing import List, Optional, Tuple

from pydantic import BaseModel, Field, ValidationInfo, field_validator, model_validator

from app.core.exceptions import ArchitectureError
from app.models.architecture import ArchDescriptor
from app.models.audio import StftConfig
from app.models.explanation import LimeConfig
from app.models.session import TrainingMode, WeightMetric
from app.models.training import TrainConfig

DATA_SOURCES = ("manifest", "synthetic", "cache")


class SyntheticSpec(BaseModel):
    """Desk-scale stand-in for the speech commands corpus"""
    classes: Optional[int] = Field(default=None, ge=2)  # defaults to the arch output size
    per_class: int = Field(default=200, ge=1)
    noise_level: float = Field(default=0.1, ge=0)
    shape: Tuple[int, int] = (32, 32)
    speakers: int = Field(default=20, ge=3)
    validation_noise_scale: float = Field(default=1.0, ge=1.0)
    retention_per_class: int = Field(default=0, ge=0)

    class Config:
        extra = "forbid"


class SessionSettings(BaseModel):
    n_sessions: int = Field(default=3, ge=0)
    mode: TrainingMode = TrainingMode.WEIGHTED_EWC
    metric: WeightMetric = WeightMetric.EUCLIDEAN
    sqrt_weights: bool = False
    fisher_fraction: float = Field(default=0.05, gt=0, le=1)

    class Config:
        extra = "forbid"


class SplitSettings(BaseModel):
    ratios: Tuple[float, float, float] = (0.8, 0.1, 0.1)

    class Config:
        extra = "forbid"

    @field_validator("ratios")
    @classmethod
    def _sums_to_one(cls, value):
        if any(r < 0 for r in value) or abs(sum(value) - 1.0) > 1e-9:
            raise ValueError(f"split ratios must be non-negative and sum to 1, got {value}")
        return value


class RunConfig(BaseModel):
    """One reproducible experiment: data source, network, training, sessions"""
    manifest: Optional[Path] = None
    synthetic: Optional[SyntheticSpec] = None
    cache: Optional[Path] = None
    arch: str
    train: TrainConfig = Field(default_factory=TrainConfig)
    lime: LimeConfig = Field(default_factory=LimeConfig)
    sessions: SessionSettings = Field(default_factory=SessionSettings)
    split: SplitSettings = Field(default_factory=SplitSettings)
    stft: StftConfig = Field(default_factory=StftConfig)
    seed: int = 0
    out_dir: Path = Path("runs")
    class_names: Optional[List[str]] = None

    class Config:
        extra = "forbid"

    @field_validator("manifest", "cache")
    @classmethod
    def _path_exists(cls, value: Optional[Path], info: ValidationInfo):
        if value is None:
            return value
        base_dir = (info.context or {}).get("base_dir")
        if base_dir is not None and not value.is_absolute():
            value = Path(base_dir) / value
        if not value.exists():
            raise ValueError(f"{info.field_name} path does not exist: {value}")
        return value

    @field_validator("out_dir")
    @classmethod
    def _resolve_out_dir(cls, value: Path, info: ValidationInfo):
        base_dir = (info.context or {}).get("base_dir")
        if base_dir is not None and not value.is_absolute():
            return Path(base_dir) / value
        return value

    @field_validator("arch")
    @classmethod
    def _arch_parses(cls, value: str):
        try:
            ArchDescriptor.parse(value)
        except ArchitectureError as e:
            raise ValueError(str(e)) from e
        return value

    @model_validator(mode="after")
    def _exactly_one_source(self):
        given = [name for name in DATA_SOURCES if getattr(self, name) is not None]
        if len(given) != 1:
            if given:
                raise ValueError(f"exactly one data source allowed, got {' and '.join(given)}")
            raise ValueError(f"one data source required: {', '.join(DATA_SOURCES)}")
        return self

    @model_validator(mode="after")
    def _class_names_match(self):
        classes = self.architecture.num_classes
        if self.class_names is not None and len(self.class_names) != classes:
            raise ValueError(f"class_names has {len(self.class_names)} entries, arch has {classes} classes")
        if self.synthetic is not None and self.synthetic.classes is None:
            self.synthetic.classes = classes
        if self.synthetic is not None and self.synthetic.classes != classes:
            raise ValueError(f"synthetic.classes={self.synthetic.classes} but arch has {classes} classes")
        return self

    @property
    def data_source(self) -> str:
        return next(name for name in DATA_SOURCES if getattr(self, name) is not None)

    @property
    def architecture(self) -> ArchDescriptor:
        return ArchDescriptor.parse(self.arch)

    def names(self) -> List[str]:
        classes = self.architecture.num_classes
        return list(self.class_names) if self.class_names else [f"class_{i}" for i in range(classes)]
