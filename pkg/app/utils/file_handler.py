"""
File handling utilities
Supports: WAV (PCM16 mono), CSV manifests and reports, PGM debug images
"""
import csv
import io
import logging
import os
import struct
import tempfile
from pathlib import Path
from typing import Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.io import wavfile

from app.core.exceptions import (
    BadMagicError,
    BitDepthError,
    NonMonoError,
    NonPcmError,
    TruncatedPayloadError,
    UnsupportedFormatError,
)
from app.models.audio import AudioClip

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

NOHASH_MARKER = "_nohash_"


class FileHandler:
    """Utility class for reading inputs and writing run artifacts"""

    SUPPORTED_EXTENSIONS = {'.wav'}

    @staticmethod
    def is_supported(filename: PathLike) -> bool:
        """Check if file extension is supported"""
        return Path(filename).suffix.lower() in FileHandler.SUPPORTED_EXTENSIONS

    @staticmethod
    def read_wav(path: PathLike) -> AudioClip:
        """
        Load a RIFF/WAVE file holding 16-bit signed little-endian mono PCM

        Args:
            path: Path to the .wav file

        Returns:
            AudioClip with samples scaled by 1/32768 and the file's sample rate

        Raises:
            BadMagicError: Not a RIFF/WAVE container (e.g. "RIFX")
            NonPcmError / NonMonoError / BitDepthError: Unsupported encoding
            TruncatedPayloadError: File shorter than its RIFF header declares,
                or chunks the decoder cannot read
        """
        path = Path(path)
        raw = path.read_bytes()

        if len(raw) < 12 or raw[0:4] != b"RIFF" or raw[8:12] != b"WAVE":
            raise BadMagicError(f"{path.name}: not a RIFF/WAVE file (magic {raw[0:4]!r})")
        (riff_size,) = struct.unpack_from("<I", raw, 4)
        if riff_size + 8 > len(raw):
            raise TruncatedPayloadError(f"{path.name}: RIFF header declares {riff_size + 8} bytes, file has {len(raw)}")

        try:
            sample_rate, data = wavfile.read(io.BytesIO(raw))
        except ValueError as e:
            message = str(e)
            if "Unknown wave file format" in message or "floating-point" in message:
                raise NonPcmError(f"{path.name}: {message}") from e
            if "bit depth" in message:
                raise BitDepthError(f"{path.name}: {message}") from e
            raise TruncatedPayloadError(f"{path.name}: {message}") from e

        if np.issubdtype(data.dtype, np.floating):
            raise NonPcmError(f"{path.name}: {data.dtype} samples are IEEE float, not PCM")
        if data.ndim > 1:
            raise NonMonoError(f"{path.name}: {data.shape[1]} channels, only mono is supported")
        if data.dtype != np.int16:
            raise BitDepthError(f"{path.name}: {data.dtype.itemsize * 8}-bit samples, only 16-bit is supported")

        samples = data.astype(np.float64) / 32768.0
        logger.debug(f"Loaded {path.name}: {samples.size} samples at {sample_rate} Hz")
        return AudioClip(samples=samples, sample_rate=int(sample_rate), source_id=str(path))

    @staticmethod
    def speaker_from_filename(path: PathLike) -> str:
        """Speech Commands naming: the part before "_nohash_" identifies the speaker"""
        name = Path(path).name
        if NOHASH_MARKER in name:
            return name.split(NOHASH_MARKER, 1)[0]
        return Path(path).stem

    @staticmethod
    def read_manifest(path: PathLike) -> List[Tuple[Path, str, str]]:
        """
        Read ``path,label[,speaker_id]`` lines

        Relative audio paths resolve against the manifest's directory; a
        header line starting with ``path`` is skipped.
        """
        path = Path(path)
        entries = []
        with open(path, "r", encoding="utf-8", newline="") as f:
            for line_no, row in enumerate(csv.reader(f), start=1):
                if not row or not "".join(row).strip():
                    continue
                if line_no == 1 and row[0].strip().lower() == "path":
                    continue
                if len(row) < 2:
                    raise ValueError(f"{path.name}:{line_no}: expected path,label[,speaker_id]")
                audio = Path(row[0].strip())
                if not FileHandler.is_supported(audio):
                    raise UnsupportedFormatError(f"{path.name}:{line_no}: {audio.name} is not a .wav file")
                if not audio.is_absolute():
                    audio = path.parent / audio
                speaker = row[2].strip() if len(row) > 2 else ""
                entries.append((audio, row[1].strip(), speaker or FileHandler.speaker_from_filename(audio)))
        logger.info(f"Read {len(entries)} manifest entries from {path.name}")
        return entries

    @staticmethod
    def atomic_write_bytes(path: PathLike, payload: bytes) -> Path:
        """Write via a temp file in the target directory, then rename over the target"""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp_name = tempfile.mkstemp(prefix=f".{path.name}.", dir=str(path.parent))
        try:
            with os.fdopen(fd, "wb") as f:
                f.write(payload)
            os.replace(tmp_name, path)
        except BaseException:
            if os.path.exists(tmp_name):
                os.unlink(tmp_name)
            raise
        return path

    @staticmethod
    def write_csv(
        path: PathLike,
        header: Sequence[str],
        rows: Iterable[Sequence],
        preamble: Optional[Sequence] = None,
    ) -> Path:
        """CSV with a header row and fixed column order; optional single preamble line first"""
        buffer = io.StringIO()
        writer = csv.writer(buffer, lineterminator="\n")
        if preamble is not None:
            writer.writerow([FileHandler.format_cell(value) for value in preamble])
        writer.writerow(header)
        for row in rows:
            writer.writerow([FileHandler.format_cell(value) for value in row])
        path = FileHandler.atomic_write_bytes(path, buffer.getvalue().encode("utf-8"))
        logger.info(f"Wrote {path}")
        return path

    @staticmethod
    def format_cell(value) -> str:
        if isinstance(value, (float, np.floating)):
            return f"{float(value):.10g}"
        if value is None:
            return ""
        return str(value)

    @staticmethod
    def format_file_size(size_bytes: int) -> str:
        """Human-readable byte count for log lines"""
        size = float(size_bytes)
        for unit in ('B', 'KB', 'MB', 'GB'):
            if size < 1024.0:
                return f"{size:.1f} {unit}"
            size /= 1024.0
        return f"{size:.1f} TB"

    @staticmethod
    def write_pgm(path: PathLike, image: np.ndarray) -> Path:
        """Binary (P5) greyscale image, maxval 255"""
        image = np.asarray(image)
        if image.ndim != 2:
            raise ValueError(f"PGM image must be 2-D, got shape {image.shape}")
        gray = np.clip(image, 0, 255).astype(np.uint8)
        header = f"P5\n{gray.shape[1]} {gray.shape[0]}\n255\n".encode("ascii")
        return FileHandler.atomic_write_bytes(path, header + gray.tobytes())

    @staticmethod
    def labels_to_gray(labels: np.ndarray, n_labels: Optional[int] = None) -> np.ndarray:
        """Scale integer labels 0..n-1 onto gray levels 0..255"""
        labels = np.asarray(labels, dtype=np.int64)
        top = max(1, (int(labels.max()) if n_labels is None else n_labels - 1))
        return (labels * 255) // top
