"""
Tests for WAV parsing, preprocessing, speaker splits and synthetic data
"""
import struct

import numpy as np
import pytest

from app.core.exceptions import (
    BadMagicError,
    BitDepthError,
    NonMonoError,
    NonPcmError,
    SampleRateError,
    SpeakerCountError,
    TruncatedPayloadError,
    UnsupportedFormatError,
)
from app.models.audio import AudioClip, StftConfig
from app.services.audio_service import AudioService
from app.utils.file_handler import FileHandler
from tests.conftest import make_spectrogram, wav_bytes


class TestReadWav:

    def test_hand_crafted_fixture(self, write_wav):
        path = write_wav("clip.wav", [0, 16384, -32768])
        assert path.stat().st_size == 44 + 6
        clip = FileHandler.read_wav(path)
        assert clip.samples.tolist() == [0.0, 0.5, -1.0]
        assert clip.sample_rate == 16000

    def test_rifx_is_bad_magic(self, write_wav):
        with pytest.raises(BadMagicError):
            FileHandler.read_wav(write_wav("be.wav", [1, 2], magic=b"RIFX"))

    def test_stereo(self, write_wav):
        with pytest.raises(NonMonoError):
            FileHandler.read_wav(write_wav("stereo.wav", [1, 2, 3, 4], channels=2))

    def test_non_pcm(self, write_wav):
        with pytest.raises(NonPcmError):
            FileHandler.read_wav(write_wav("float.wav", [0.25, -0.5], audio_format=3, bits=32))

    def test_other_codec_is_non_pcm(self, write_wav):
        with pytest.raises(NonPcmError):
            FileHandler.read_wav(write_wav("alaw.wav", [213, 85], audio_format=6, bits=8))

    @pytest.mark.parametrize("bits", [8, 24, 32])
    def test_bit_depth(self, write_wav, bits):
        with pytest.raises(BitDepthError):
            FileHandler.read_wav(write_wav(f"b{bits}.wav", [1, 2], bits=bits))

    def test_truncated_data_chunk(self, tmp_path):
        path = tmp_path / "short.wav"
        path.write_bytes(wav_bytes([1, 2, 3, 4])[:-3])
        with pytest.raises(TruncatedPayloadError):
            FileHandler.read_wav(path)

    def test_shorter_than_riff_header(self, tmp_path):
        path = tmp_path / "stub.wav"
        path.write_bytes(b"RIFF\x04\x00")
        with pytest.raises(BadMagicError):
            FileHandler.read_wav(path)

    def test_trailing_chunk_is_ignored(self, tmp_path):
        raw = wav_bytes([100, -100])
        extra = b"LIST" + struct.pack("<I", 4) + b"INFO"
        patched = raw[:4] + struct.pack("<I", len(raw) - 8 + len(extra)) + raw[8:] + extra
        path = tmp_path / "tagged.wav"
        path.write_bytes(patched)
        assert FileHandler.read_wav(path).samples.tolist() == [100 / 32768, -100 / 32768]

    def test_speaker_from_filename(self):
        assert FileHandler.speaker_from_filename("yes/0a7c2a8d_nohash_1.wav") == "0a7c2a8d"
        assert FileHandler.speaker_from_filename("other.wav") == "other"

    def test_manifest_rejects_other_formats(self, tmp_path):
        manifest = tmp_path / "manifest.csv"
        manifest.write_text("path,label\nclip.mp3,yes\n", encoding="utf-8")
        with pytest.raises(UnsupportedFormatError, match="clip.mp3"):
            FileHandler.read_manifest(manifest)

    def test_manifest_speaker_fallback(self, tmp_path):
        manifest = tmp_path / "manifest.csv"
        manifest.write_text("path,label,speaker_id\nyes/ab12_nohash_0.wav,yes,\nno/c.wav,no,bob\n", encoding="utf-8")
        entries = FileHandler.read_manifest(manifest)
        assert [(p.name, label, speaker) for p, label, speaker in entries] == [
            ("ab12_nohash_0.wav", "yes", "ab12"), ("c.wav", "no", "bob"),
        ]
        assert entries[0][0] == tmp_path / "yes" / "ab12_nohash_0.wav"


class TestPreprocessing:

    def test_normalize_length(self):
        exact = AudioClip(samples=np.arange(16000) / 16000)
        assert np.array_equal(AudioService.normalize_length(exact).samples, exact.samples)

        short = AudioService.normalize_length(AudioClip(samples=np.ones(100)))
        assert short.samples.size == 16000
        assert np.all(short.samples[:100] == 1) and np.all(short.samples[100:] == 0)

        long = AudioService.normalize_length(AudioClip(samples=np.arange(20000, dtype=float)))
        assert np.array_equal(long.samples, np.arange(16000, dtype=float))

    def test_sample_rate_check(self):
        with pytest.raises(SampleRateError):
            AudioService.check_sample_rate(AudioClip(samples=np.zeros(10), sample_rate=8000))

    def test_zero_clip(self):
        spec = AudioService.spectrogram(AudioClip(samples=np.zeros(16000)))
        assert spec.shape == (128, 128)
        assert np.all(spec.values == 0)

    def test_constant_clip_energy_in_bin_zero(self):
        spec = AudioService.spectrogram(AudioClip(samples=np.full(16000, 0.5)))
        frames = spec.values[:, :124]
        assert np.all(frames[0] > 0)
        assert np.all(frames[2:] < 1e-6 * frames[0])
        # frames beyond the 124 computed ones are zero padding
        assert np.all(spec.values[:, 124:] == 0)

    @pytest.mark.parametrize("k", [5, 17, 40])
    def test_sinusoid_peaks_in_its_bin(self, k):
        t = np.arange(16000) / 16000
        spec = AudioService.spectrogram(AudioClip(samples=0.5 * np.sin(2 * np.pi * 62.5 * k * t)))
        peaks = np.argmax(spec.values[:, 2:120], axis=0)
        assert np.all(peaks == k)

    def test_energy_monotone_in_amplitude(self):
        t = np.arange(16000) / 16000
        signal = np.sin(2 * np.pi * 440 * t) + 0.3 * np.sin(2 * np.pi * 1250 * t)
        energies = [
            AudioService.spectrogram(AudioClip(samples=a * signal / 2)).values.astype(np.float64).sum()
            for a in (0.1, 0.4, 0.8)
        ]
        assert energies[0] <= energies[1] <= energies[2]

    def test_custom_stft_shape(self):
        cfg = StftConfig(n_fft=64, hop=32, n_bins=32, n_frames=40)
        assert AudioService.spectrogram(AudioClip(samples=np.ones(1000)), cfg).shape == (32, 40)


def items_for(speakers, per_speaker=1):
    return [
        make_spectrogram(np.zeros((2, 2)), speaker=speaker, source=f"{speaker}-{j}")
        for speaker in speakers for j in range(per_speaker)
    ]


class TestSplitBySpeaker:

    def test_ten_speakers_floor_rounding(self):
        split = AudioService.split_by_speaker(items_for([f"s{i}" for i in range(10)]), seed=0)
        assert (len(split.train), len(split.validation), len(split.test)) == (8, 1, 1)

    def test_same_seed_same_assignment(self):
        items = items_for([f"s{i}" for i in range(12)], per_speaker=2)
        a = AudioService.split_by_speaker(items, seed=4)
        b = AudioService.split_by_speaker(items, seed=4)
        assert [c.source_id for c in a.test] == [c.source_id for c in b.test]

    def test_too_few_speakers(self):
        with pytest.raises(SpeakerCountError):
            AudioService.split_by_speaker(items_for(["a", "b"]), seed=0)

    def test_ratios_leave_a_split_empty(self):
        with pytest.raises(SpeakerCountError, match=r"\(3, 0, 0\)"):
            AudioService.split_by_speaker(items_for(["a", "b", "c"]), seed=0)

    def test_three_speakers_even_ratios(self):
        split = AudioService.split_by_speaker(items_for(["a", "b", "c"]), (0.3, 0.35, 0.35), seed=0)
        assert (len(split.train), len(split.validation), len(split.test)) == (1, 1, 1)

    def test_random_populations(self):
        rng = np.random.default_rng(99)
        ratios = (0.8, 0.1, 0.1)
        for trial in range(100):
            n_speakers = int(rng.integers(3, 61))
            counts = rng.integers(1, 5, size=n_speakers)
            items = [
                make_spectrogram(np.zeros((2, 2)), speaker=f"p{s}")
                for s in range(n_speakers) for _ in range(counts[s])
            ]
            if n_speakers < 10:
                # floor(0.1 n) == 0 leaves test without a speaker
                with pytest.raises(SpeakerCountError):
                    AudioService.split_by_speaker(items, ratios, seed=trial)
                continue

            split = AudioService.split_by_speaker(items, ratios, seed=trial)
            groups = [split.speakers(part) for part in (split.train, split.validation, split.test)]
            assert not (groups[0] & groups[1]) and not (groups[0] & groups[2]) and not (groups[1] & groups[2])
            assert len(groups[0] | groups[1] | groups[2]) == n_speakers
            for group, ratio in zip(groups, ratios):
                assert abs(len(group) - ratio * n_speakers) <= 1


class TestSynthetic:

    def test_noise_free_same_class_identical(self):
        items = AudioService.gen_synthetic(classes=3, per_class=2, seed=0, noise_level=0.0, shape=(16, 16))
        assert np.array_equal(items[0].values, items[1].values)
        assert not np.array_equal(items[0].values, items[2].values)

    def test_speakers_round_robin(self):
        items = AudioService.gen_synthetic(classes=2, per_class=5, seed=0, shape=(8, 8), speakers=3)
        assert [i.speaker_id for i in items[:4]] == ["spk000", "spk001", "spk002", "spk000"]

    def test_nearest_centroid_oracle(self):
        items = AudioService.gen_synthetic(classes=5, per_class=4, seed=1, noise_level=0.0, shape=(20, 20))
        labels = np.array([i.label for i in items])
        values = np.stack([i.values.reshape(-1) for i in items]).astype(np.float64)
        centroids = np.stack([values[labels == k].mean(axis=0) for k in range(5)])
        predicted = np.argmin(((values[:, None] - centroids[None]) ** 2).sum(axis=2), axis=1)
        assert np.mean(predicted == labels) == 1.0

    def test_seeded(self):
        a = AudioService.gen_synthetic(classes=2, per_class=3, seed=5, shape=(8, 8))
        b = AudioService.gen_synthetic(classes=2, per_class=3, seed=5, shape=(8, 8))
        assert all(np.array_equal(x.values, y.values) for x, y in zip(a, b))

    def test_add_noise_is_non_negative_shift(self):
        items = AudioService.gen_synthetic(classes=2, per_class=2, seed=0, noise_level=0.0, shape=(8, 8))
        noisy = AudioService.add_noise(items, 0.5, seed=3)
        for before, after in zip(items, noisy):
            delta = after.values.astype(np.float64) - before.values.astype(np.float64)
            assert np.all(delta >= -1e-7) and np.all(delta < 0.5 + 1e-6)
            assert after.label == before.label and after.speaker_id == before.speaker_id
