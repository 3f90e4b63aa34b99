"""
Shared fixtures: tiny architectures, synthetic spectrograms and WAV builders
"""
import struct
from pathlib import Path

import numpy as np
import pytest

from app.models.architecture import ArchDescriptor
from app.models.audio import Spectrogram
from app.services.audio_service import AudioService

TINY_ARCH = "in:8x8x1;c3x2-p2-fc6-out2"
SMALL_ARCH = "in:16x16x1;c3x4-p2-c3x4-p2-fc16-out4"


SAMPLE_CODECS = {(1, 8): "u1", (1, 16): "<i2", (1, 24): "<i4", (1, 32): "<i4", (3, 32): "<f4", (6, 8): "u1"}


def wav_bytes(samples, sample_rate=16000, channels=1, bits=16, audio_format=1, magic=b"RIFF"):
    """Canonical 44-byte-header RIFF/WAVE file; samples are packed to match format and bit depth"""
    pcm = np.asarray(samples, dtype=SAMPLE_CODECS[(audio_format, bits)]).tobytes()
    if bits == 24:
        pcm = b"".join(pcm[i:i + 3] for i in range(0, len(pcm), 4))
    block_align = channels * bits // 8
    header = magic + struct.pack("<I", 36 + len(pcm)) + b"WAVE"
    fmt = b"fmt " + struct.pack(
        "<IHHIIHH", 16, audio_format, channels, sample_rate, sample_rate * block_align, block_align, bits
    )
    return header + fmt + b"data" + struct.pack("<I", len(pcm)) + pcm


@pytest.fixture
def write_wav(tmp_path):
    def _write(name, samples, **kwargs) -> Path:
        path = tmp_path / name
        path.write_bytes(wav_bytes(samples, **kwargs))
        return path
    return _write


@pytest.fixture
def tiny_arch() -> ArchDescriptor:
    return ArchDescriptor.parse(TINY_ARCH)


@pytest.fixture
def small_arch() -> ArchDescriptor:
    return ArchDescriptor.parse(SMALL_ARCH)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def make_spectrogram(values, label=0, speaker="spk000", source=""):
    return Spectrogram(values=np.asarray(values), label=label, speaker_id=speaker, source_id=source)


@pytest.fixture
def synthetic_items():
    """4 classes x 40 samples of 16x16, 12 speakers"""
    return AudioService.gen_synthetic(classes=4, per_class=40, seed=0, noise_level=0.2, shape=(16, 16), speakers=12)


@pytest.fixture
def synthetic_split(synthetic_items):
    return AudioService.split_by_speaker(synthetic_items, (0.5, 0.25, 0.25), seed=0)
