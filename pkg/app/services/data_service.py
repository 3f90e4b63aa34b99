"""
Data Service - turns a run configuration into spectrogram datasets
"""
import logging
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

from app.core.exceptions import ShapeMismatchError
from app.models.audio import DatasetSplit, Spectrogram, StftConfig
from app.models.config import RunConfig
from app.services.audio_service import AudioService
from app.services.storage_service import StorageService
from app.utils.file_handler import FileHandler

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

VALIDATION_NOISE_STREAM = 1
RETENTION_STREAM = 2


class DataService:
    """Dataset assembly for the command-line runs"""

    @staticmethod
    def label_index(labels: Sequence[str], class_names: Optional[Sequence[str]] = None) -> Dict[str, int]:
        """
        Map manifest labels to class indices

        Integer labels map to themselves; otherwise ``class_names`` order is
        used when given, else the sorted set of label strings.
        """
        unique = sorted(set(labels))
        if all(label.isdigit() for label in unique):
            return {label: int(label) for label in unique}
        names = list(class_names) if class_names else unique
        missing = [label for label in unique if label not in names]
        if missing:
            raise ValueError(f"labels not in class_names: {missing[:5]}")
        return {name: names.index(name) for name in unique}

    @staticmethod
    def load_manifest(
        manifest: PathLike,
        stft_cfg: Optional[StftConfig] = None,
        class_names: Optional[Sequence[str]] = None,
    ) -> Tuple[List[Spectrogram], List[str]]:
        """
        Read every clip in a manifest and compute its spectrogram

        Returns:
            (spectrograms in manifest order, class names by index)
        """
        entries = FileHandler.read_manifest(manifest)
        mapping = DataService.label_index([label for _, label, _ in entries], class_names)

        items = []
        for audio_path, label, speaker in entries:
            clip = AudioService.check_sample_rate(FileHandler.read_wav(audio_path))
            clip = AudioService.normalize_length(clip).model_copy(
                update={"label": mapping[label], "speaker_id": speaker, "source_id": str(audio_path)}
            )
            items.append(AudioService.spectrogram(clip, stft_cfg))

        names = [name for name, _ in sorted(mapping.items(), key=lambda kv: kv[1])]
        logger.info(f"Prepared {len(items)} spectrograms from {Path(manifest).name} ({len(names)} labels)")
        return items, names

    @staticmethod
    def prepare_from_manifest(
        manifest: PathLike,
        cache: PathLike,
        stft_cfg: Optional[StftConfig] = None,
        class_names: Optional[Sequence[str]] = None,
    ) -> Tuple[Path, List[str]]:
        """Manifest of WAV files -> SPC1 cache; returns (cache path, class names)"""
        items, names = DataService.load_manifest(manifest, stft_cfg, class_names)
        return StorageService.cache_write(items, cache), names

    @staticmethod
    def load_spectrograms(cfg: RunConfig) -> List[Spectrogram]:
        """All samples of the configured source, before splitting"""
        source = cfg.data_source
        if source == "cache":
            return StorageService.cache_read(cfg.cache)
        if source == "manifest":
            return DataService.load_manifest(cfg.manifest, cfg.stft, cfg.class_names)[0]

        spec = cfg.synthetic
        return AudioService.gen_synthetic(
            classes=spec.classes,
            per_class=spec.per_class,
            seed=cfg.seed,
            noise_level=spec.noise_level,
            shape=spec.shape,
            speakers=spec.speakers,
        )

    @staticmethod
    def build_datasets(cfg: RunConfig) -> Tuple[DatasetSplit, List[Spectrogram]]:
        """
        Speaker-disjoint split of the configured data plus an optional retention set

        For synthetic data with ``validation_noise_scale`` > 1 the validation
        split receives extra noise of (scale - 1) * noise_level, and with
        ``retention_per_class`` > 0 a separately seeded retention set is generated at
        the base noise level.

        Raises:
            ShapeMismatchError: Sample shape differs from the architecture input
        """
        items = DataService.load_spectrograms(cfg)
        height, width, _ = cfg.architecture.input_shape
        if items and items[0].shape != (height, width):
            raise ShapeMismatchError("dataset samples", (height, width), items[0].shape)

        split = AudioService.split_by_speaker(items, tuple(cfg.split.ratios), seed=cfg.seed)
        retention: List[Spectrogram] = []

        spec = cfg.synthetic
        if spec is not None:
            if spec.validation_noise_scale > 1:
                extra = (spec.validation_noise_scale - 1) * spec.noise_level
                split = split.model_copy(update={
                    "validation": AudioService.add_noise(
                        split.validation, extra, seed=(cfg.seed, VALIDATION_NOISE_STREAM)
                    )
                })
                logger.info(f"Shifted validation split with extra noise {extra:g}")
            if spec.retention_per_class > 0:
                retention = AudioService.gen_synthetic(
                    classes=spec.classes,
                    per_class=spec.retention_per_class,
                    seed=(cfg.seed, RETENTION_STREAM),
                    noise_level=spec.noise_level,
                    shape=spec.shape,
                    speakers=spec.speakers,
                )
        return split, retention
