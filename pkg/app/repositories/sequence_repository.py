# app/repositories/sequence_repository.py
from pathlib import Path
from typing import List, Union

import numpy as np
import torch

from app.repositories.base_repository import BaseRepository, PathLike
from app.schemas.sequences import Sequence
from app.utils.exceptions import FormatError

SEQF_MAGIC = b"SEQF"
SEQF_VERSION = 1
# magic, version, height, width, frame_count
SEQF_HEADER_BYTES = 20


class SequenceRepository(BaseRepository[Sequence]):
    """SEQF container: little-endian u32 header then float32 frames, frame-major row-major."""

    suffix = ".seqf"

    def encode(self, seq: Sequence) -> bytes:
        frames = seq.frames.detach().to(torch.float32).cpu().numpy()
        length, height, width = frames.shape
        header = np.array([SEQF_VERSION, height, width, length], dtype="<u4").tobytes()
        return SEQF_MAGIC + header + frames.astype("<f4").tobytes(order="C")

    def decode(self, payload: bytes) -> Sequence:
        if len(payload) < 4:
            raise FormatError("truncated SEQF header", offset=len(payload))
        if payload[:4] != SEQF_MAGIC:
            raise FormatError("not a SEQF file", offset=0)
        if len(payload) < SEQF_HEADER_BYTES:
            raise FormatError("truncated SEQF header", offset=len(payload))
        version, height, width, length = (int(v) for v in np.frombuffer(payload, dtype="<u4", count=4, offset=4))
        if version != SEQF_VERSION:
            raise FormatError(f"unsupported SEQF version {version}", offset=4)
        for name, value, offset in (("height", height, 8), ("width", width, 12), ("frame_count", length, 16)):
            if value == 0:
                raise FormatError(f"SEQF {name} must be positive", offset=offset)

        expected = SEQF_HEADER_BYTES + 4 * length * height * width
        if len(payload) < expected:
            raise FormatError(f"truncated SEQF frame data, expected {expected} bytes", offset=len(payload))
        if len(payload) > expected:
            raise FormatError("trailing bytes after SEQF frame data", offset=expected)

        data = np.frombuffer(payload, dtype="<f4", count=length * height * width, offset=SEQF_HEADER_BYTES)
        frames = torch.from_numpy(data.astype(np.float32).reshape(length, height, width).copy())
        try:
            return Sequence(frames=frames)
        except ValueError as e:
            raise FormatError(f"invalid SEQF frames: {e}", offset=SEQF_HEADER_BYTES) from e


class PgmRepository(BaseRepository[torch.Tensor]):
    """Binary PGM (P5, maxval 255) for data-space frames."""

    suffix = ".pgm"

    def encode(self, frame: torch.Tensor) -> bytes:
        if frame.dim() != 2:
            raise FormatError(f"PGM frames must be 2-D, got {tuple(frame.shape)}")
        height, width = frame.shape
        pixels = np.rint(frame.detach().double().clamp(0.0, 1.0).cpu().numpy() * 255.0).astype(np.uint8)
        return f"P5\n{width} {height}\n255\n".encode("ascii") + pixels.tobytes()

    def decode(self, payload: bytes) -> torch.Tensor:
        if payload[:2] != b"P5":
            raise FormatError("not a binary PGM file", offset=0)
        fields: List[int] = []
        pos = 2
        while len(fields) < 3:
            while pos < len(payload) and payload[pos:pos + 1].isspace():
                pos += 1
            start = pos
            while pos < len(payload) and payload[pos:pos + 1].isdigit():
                pos += 1
            if start == pos:
                raise FormatError("malformed PGM header", offset=pos)
            fields.append(int(payload[start:pos]))
        width, height, maxval = fields
        if maxval != 255:
            raise FormatError(f"unsupported PGM maxval {maxval}", offset=pos)
        pos += 1
        if len(payload) - pos != width * height:
            raise FormatError("PGM pixel data has the wrong length", offset=pos)
        pixels = np.frombuffer(payload, dtype=np.uint8, offset=pos).reshape(height, width)
        return torch.from_numpy(pixels.astype(np.float32) / 255.0)


# Create singleton instances
sequence_repository = SequenceRepository()
pgm_repository = PgmRepository()


def save_sequence(seq: Sequence, path: PathLike) -> Path:
    return sequence_repository.save(seq, path)


def load_sequence(path: Union[str, Path]) -> Sequence:
    return sequence_repository.load(path)
