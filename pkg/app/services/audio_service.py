"""
Audio Service - clips to fixed-size log-magnitude spectrograms, speaker splits,
and the synthetic keyword corpus used for desk-scale runs
"""
import logging
import math
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
import torch

from app.core.exceptions import SampleRateError, SpeakerCountError
from app.models.audio import (
    CLIP_LENGTH,
    SAMPLE_RATE,
    AudioClip,
    DatasetSplit,
    Spectrogram,
    StftConfig,
)

logger = logging.getLogger(__name__)

SeedLike = Union[int, Tuple[int, ...]]


class AudioService:
    """Preprocessing for keyword-spotting clips"""

    @staticmethod
    def normalize_length(clip: AudioClip, target: int = CLIP_LENGTH) -> AudioClip:
        """
        Zero-pad short clips at the tail, truncate long clips at the tail

        Args:
            clip: Input clip
            target: Output length in samples

        Returns:
            Clip of exactly ``target`` samples
        """
        samples = clip.samples
        if samples.size < target:
            samples = np.pad(samples, (0, target - samples.size))
        else:
            samples = samples[:target]
        return clip.model_copy(update={"samples": np.array(samples, dtype=np.float64)})

    @staticmethod
    def check_sample_rate(clip: AudioClip) -> AudioClip:
        """Resampling is out of scope; reject anything but 16 kHz"""
        if clip.sample_rate != SAMPLE_RATE:
            raise SampleRateError(f"{clip.source_id or 'clip'}: {clip.sample_rate} Hz, expected {SAMPLE_RATE} Hz")
        return clip

    @staticmethod
    def spectrogram(clip: AudioClip, stft_cfg: Optional[StftConfig] = None) -> Spectrogram:
        """
        Log-compressed STFT magnitude

        Periodic Hann window, no centering; the Nyquist bin is dropped and
        frames are zero-padded (or cut) to ``n_frames``. For the defaults a
        16000-sample clip gives 124 frames, padded to 128x128.

        Args:
            clip: Length-normalized clip
            stft_cfg: STFT settings

        Returns:
            Spectrogram of shape (n_bins, n_frames)
        """
        cfg = stft_cfg or StftConfig()
        signal = torch.from_numpy(np.ascontiguousarray(clip.samples, dtype=np.float64))
        if signal.numel() < cfg.n_fft:
            signal = torch.nn.functional.pad(signal, (0, cfg.n_fft - signal.numel()))

        window = torch.hann_window(cfg.n_fft, periodic=True, dtype=torch.float64)
        stft = torch.stft(
            signal,
            n_fft=cfg.n_fft,
            hop_length=cfg.hop,
            win_length=cfg.n_fft,
            window=window,
            center=False,
            return_complex=True,
        )
        magnitude = torch.log1p(stft.abs()).numpy()

        bins = magnitude[:cfg.n_bins, :cfg.n_frames]
        values = np.zeros((cfg.n_bins, cfg.n_frames), dtype=np.float64)
        values[:bins.shape[0], :bins.shape[1]] = bins

        return Spectrogram(
            values=values,
            label=clip.label if clip.label is not None else 0,
            speaker_id=clip.speaker_id,
            source_id=clip.source_id,
        )

    @staticmethod
    def split_by_speaker(
        clips: Sequence[Spectrogram],
        ratios: Tuple[float, float, float] = (0.8, 0.1, 0.1),
        seed: int = 0,
    ) -> DatasetSplit:
        """
        Speaker-disjoint train/validation/test partition

        Speakers are sorted and shuffled by ``seed``. Test takes floor(n * r_test)
        speakers, validation and test together floor(n * (r_val + r_test)), and
        the remainder goes to train, which keeps each split within one speaker
        of its target n * r.

        Raises:
            SpeakerCountError: Fewer than 3 distinct speakers, or too few for
                the ratios to give every split at least one speaker
        """
        speakers = sorted({clip.speaker_id for clip in clips})
        n = len(speakers)
        if n < 3:
            raise SpeakerCountError(f"need at least 3 speakers for a 3-way split, got {n}")

        n_test = math.floor(n * ratios[2] + 1e-9)
        held_out = math.floor(n * (ratios[1] + ratios[2]) + 1e-9)
        sizes = (n - held_out, held_out - n_test, n_test)
        if min(sizes) == 0:
            raise SpeakerCountError(
                f"{n} speakers at ratios {tuple(ratios)} give split sizes {sizes}; every split needs a speaker"
            )

        order = np.random.default_rng(seed).permutation(n)
        shuffled = [speakers[i] for i in order]
        train = set(shuffled[:sizes[0]])
        validation = set(shuffled[sizes[0]:sizes[0] + sizes[1]])

        split = DatasetSplit(
            train=[c for c in clips if c.speaker_id in train],
            validation=[c for c in clips if c.speaker_id in validation],
            test=[c for c in clips if c.speaker_id not in train and c.speaker_id not in validation],
            ratios=ratios,
        )
        logger.info(
            f"Speaker split ({n} speakers): train={len(split.train)}, "
            f"validation={len(split.validation)}, test={len(split.test)} clips"
        )
        return split

    @staticmethod
    def blob_layout(label: int, classes: int, shape: Tuple[int, int]) -> Tuple[slice, slice]:
        """Time-frequency rectangle for a class: cell ``label`` of a g x g grid, inner half"""
        grid = math.ceil(math.sqrt(classes))
        row, col = divmod(label, grid)
        height, width = shape
        cell_h, cell_w = height / grid, width / grid
        top = int(round(row * cell_h + cell_h / 4))
        left = int(round(col * cell_w + cell_w / 4))
        bottom = max(top + 1, int(round(row * cell_h + 3 * cell_h / 4)))
        right = max(left + 1, int(round(col * cell_w + 3 * cell_w / 4)))
        return slice(top, bottom), slice(left, right)

    @staticmethod
    def gen_synthetic(
        classes: int,
        per_class: int,
        seed: SeedLike = 0,
        noise_level: float = 0.1,
        shape: Tuple[int, int] = (128, 128),
        speakers: int = 20,
    ) -> List[Spectrogram]:
        """
        Synthetic keyword spectrograms

        Class k is a unit-energy rectangular blob at a class-specific position
        plus seeded uniform noise in [0, noise_level). Speaker ids are assigned
        round-robin from a pool of ``speakers``.
        """
        if classes < 2:
            raise ValueError(f"need at least 2 classes, got {classes}")

        rng = np.random.default_rng(seed)
        items = []
        index = 0
        for label in range(classes):
            rows, cols = AudioService.blob_layout(label, classes, shape)
            clean = np.zeros(shape, dtype=np.float64)
            clean[rows, cols] = 1.0
            for j in range(per_class):
                values = clean + rng.random(shape) * noise_level if noise_level > 0 else clean.copy()
                items.append(Spectrogram(
                    values=values,
                    label=label,
                    speaker_id=f"spk{index % speakers:03d}",
                    source_id=f"synthetic-{label}-{j}",
                ))
                index += 1

        logger.info(f"Generated {len(items)} synthetic spectrograms ({classes} classes, noise={noise_level})")
        return items

    @staticmethod
    def add_noise(items: Sequence[Spectrogram], noise_level: float, seed: SeedLike = 0) -> List[Spectrogram]:
        """Add seeded uniform [0, noise_level) noise, e.g. to shift a validation stream"""
        if noise_level <= 0:
            return list(items)
        rng = np.random.default_rng(seed)
        return [
            item.with_values(item.values.astype(np.float64) + rng.random(item.shape) * noise_level)
            for item in items
        ]
