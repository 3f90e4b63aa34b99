"""
Storage Service - binary spectrogram cache and model checkpoints

Spectrogram cache (little-endian):
    "SPC1" | u32 count | u32 F | u32 T
    per record: u32 label | u16 speaker length | speaker UTF-8 | F*T float32 row-major

Checkpoint (little-endian):
    "LEWC" | u32 version | u32 descriptor length | descriptor UTF-8 | u32 session_id
    | u64 param count | params float64 | u8 flags (bit0: anchor+fisher)
    | [anchor float64 x count | fisher float64 x count]
"""
import logging
import struct
from pathlib import Path
from typing import List, Union

import numpy as np

from app.core.exceptions import (
    BadMagicError,
    DimensionOverflowError,
    ParamCountMismatchError,
    TruncatedPayloadError,
    VersionMismatchError,
)
from app.models.architecture import ArchDescriptor
from app.models.audio import Spectrogram
from app.models.session import CHECKPOINT_VERSION, Checkpoint
from app.utils.file_handler import FileHandler

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

CACHE_MAGIC = b"SPC1"
CHECKPOINT_MAGIC = b"LEWC"
MAX_CELLS = 1 << 26  # 8192 x 8192 pixels
MAX_SPEAKER_BYTES = 0xFFFF
FLAG_EWC_STATE = 0x01


class _Reader:
    """Bounds-checked cursor over a byte payload"""

    def __init__(self, payload: bytes, name: str):
        self.payload = payload
        self.name = name
        self.offset = 0

    def take(self, size: int, what: str) -> bytes:
        end = self.offset + size
        if end > len(self.payload):
            raise TruncatedPayloadError(
                f"{self.name}: truncated while reading {what} "
                f"(need {size} bytes at offset {self.offset}, file has {len(self.payload)})"
            )
        chunk = self.payload[self.offset:end]
        self.offset = end
        return chunk

    def unpack(self, fmt: str, what: str):
        values = struct.unpack(fmt, self.take(struct.calcsize(fmt), what))
        return values[0] if len(values) == 1 else values

    def vector(self, count: int, dtype: str, what: str) -> np.ndarray:
        itemsize = np.dtype(dtype).itemsize
        return np.frombuffer(self.take(count * itemsize, what), dtype=dtype).copy()


class StorageService:
    """Bit-exact persistence for datasets and checkpoints"""

    @staticmethod
    def cache_write(dataset: List[Spectrogram], path: PathLike) -> Path:
        """
        Write spectrograms to the SPC1 cache (atomic temp + rename)

        Raises:
            ValueError: Empty dataset, mixed spectrogram shapes or a speaker id
                longer than the u16 length field allows
        """
        if not dataset:
            raise ValueError("cannot cache an empty dataset")
        height, width = dataset[0].shape
        parts = [CACHE_MAGIC, struct.pack("<III", len(dataset), height, width)]
        for item in dataset:
            if item.shape != (height, width):
                raise ValueError(f"mixed spectrogram shapes: {item.shape} vs {(height, width)}")
            speaker = item.speaker_id.encode("utf-8")
            if len(speaker) > MAX_SPEAKER_BYTES:
                raise ValueError(f"speaker id of {len(speaker)} UTF-8 bytes exceeds {MAX_SPEAKER_BYTES}")
            parts.append(struct.pack("<IH", item.label, len(speaker)))
            parts.append(speaker)
            parts.append(item.values.astype("<f4", copy=False).tobytes(order="C"))

        payload = b"".join(parts)
        path = FileHandler.atomic_write_bytes(path, payload)
        logger.info(f"Cached {len(dataset)} spectrograms to {path} ({FileHandler.format_file_size(len(payload))})")
        return path

    @staticmethod
    def cache_read(path: PathLike) -> List[Spectrogram]:
        """
        Read an SPC1 cache

        Raises:
            BadMagicError: File does not start with "SPC1"
            DimensionOverflowError: Zero or implausibly large F/T
            TruncatedPayloadError: Header promises more records than present
        """
        path = Path(path)
        reader = _Reader(path.read_bytes(), path.name)
        magic = reader.take(4, "magic") if len(reader.payload) >= 4 else reader.payload
        if magic != CACHE_MAGIC:
            raise BadMagicError(f"{path.name}: bad cache magic {magic!r}, expected {CACHE_MAGIC!r}")

        count, height, width = reader.unpack("<III", "header")
        if height == 0 or width == 0 or height * width > MAX_CELLS:
            raise DimensionOverflowError(f"{path.name}: implausible spectrogram dimensions {height}x{width}")

        items = []
        for index in range(count):
            label, speaker_len = reader.unpack("<IH", f"record {index} header")
            speaker = reader.take(speaker_len, f"record {index} speaker").decode("utf-8")
            values = reader.vector(height * width, "<f4", f"record {index} values").reshape(height, width)
            items.append(Spectrogram(
                values=values,
                label=label,
                speaker_id=speaker,
                source_id=f"{path.stem}:{index}",
            ))

        logger.info(f"Read {len(items)} cached spectrograms ({height}x{width}) from {path.name}")
        return items

    @staticmethod
    def checkpoint_save(path: PathLike, checkpoint: Checkpoint) -> Path:
        """
        Write a LEWC checkpoint (atomic temp + rename)

        Raises:
            ParamCountMismatchError: Params/anchor/fisher lengths disagree with the descriptor
        """
        expected = ArchDescriptor.parse(checkpoint.arch).param_count()
        count = checkpoint.params.shape[0]
        if count != expected:
            raise ParamCountMismatchError(f"checkpoint has {count} params, descriptor implies {expected}")

        descriptor = checkpoint.arch.encode("utf-8")
        parts = [
            CHECKPOINT_MAGIC,
            struct.pack("<II", checkpoint.version, len(descriptor)),
            descriptor,
            struct.pack("<IQ", checkpoint.session_id, count),
            checkpoint.params.astype("<f8", copy=False).tobytes(),
        ]
        if checkpoint.has_ewc_state:
            for name, vector in (("anchor", checkpoint.anchor), ("fisher", checkpoint.fisher)):
                if vector.shape[0] != count:
                    raise ParamCountMismatchError(f"{name} has {vector.shape[0]} entries, expected {count}")
            parts.append(struct.pack("<B", FLAG_EWC_STATE))
            parts.append(checkpoint.anchor.astype("<f8", copy=False).tobytes())
            parts.append(checkpoint.fisher.astype("<f8", copy=False).tobytes())
        else:
            parts.append(struct.pack("<B", 0))

        path = FileHandler.atomic_write_bytes(path, b"".join(parts))
        logger.info(f"Saved checkpoint (session {checkpoint.session_id}) to {path}")
        return path

    @staticmethod
    def checkpoint_load(path: PathLike) -> Checkpoint:
        """
        Read a LEWC checkpoint

        Raises:
            BadMagicError: File does not start with "LEWC"
            VersionMismatchError: Unsupported format version
            ParamCountMismatchError: Stored count disagrees with the descriptor
            TruncatedPayloadError: Payload shorter than the header implies
        """
        path = Path(path)
        reader = _Reader(path.read_bytes(), path.name)
        magic = reader.take(4, "magic") if len(reader.payload) >= 4 else reader.payload
        if magic != CHECKPOINT_MAGIC:
            raise BadMagicError(f"{path.name}: bad checkpoint magic {magic!r}, expected {CHECKPOINT_MAGIC!r}")

        version, descriptor_len = reader.unpack("<II", "header")
        if version != CHECKPOINT_VERSION:
            raise VersionMismatchError(f"{path.name}: checkpoint version {version}, supported {CHECKPOINT_VERSION}")

        descriptor = reader.take(descriptor_len, "descriptor").decode("utf-8")
        session_id, count = reader.unpack("<IQ", "session header")
        expected = ArchDescriptor.parse(descriptor).param_count()
        if count != expected:
            raise ParamCountMismatchError(f"{path.name}: {count} params stored, descriptor implies {expected}")

        params = reader.vector(count, "<f8", "params")
        flags = reader.unpack("<B", "flags")
        anchor = fisher = None
        if flags & FLAG_EWC_STATE:
            anchor = reader.vector(count, "<f8", "anchor")
            fisher = reader.vector(count, "<f8", "fisher")

        logger.info(f"Loaded checkpoint {path.name} (session {session_id}, {count} params)")
        return Checkpoint(
            arch=descriptor,
            params=params,
            session_id=session_id,
            anchor=anchor,
            fisher=fisher,
            version=version,
        )
