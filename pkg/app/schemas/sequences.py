from typing import Dict, Optional

import torch
from pydantic import BaseModel, ConfigDict, Field, model_validator

from app.models.enums import SequenceKind


class SequenceConfig(BaseModel):
    """Parameters of one synthetic sequence."""

    model_config = ConfigDict(frozen=True)

    kind: SequenceKind = SequenceKind.BLOBS
    height: int = Field(32, ge=1)
    width: int = Field(32, ge=1)
    length: int = Field(20, ge=1, description="Number of frames")
    rho: float = Field(0.9, ge=0, le=1, description="AR(1) correlation")
    motion_level: float = Field(1.0, ge=0, description="Blob displacement in pixels per frame")
    num_blobs: int = Field(3, ge=1)
    seed: int = Field(0, ge=0, lt=2**64)


class Sequence(BaseModel):
    """Ordered data-space frames (L, H, W) with generation metadata.

    ``centers`` holds blob centres (L, num_blobs, 2) as (row, col); ``value_map`` the
    affine map (offset, scale) taking AR(1) values into [0, 1].
    """

    model_config = ConfigDict(arbitrary_types_allowed=True)

    frames: torch.Tensor
    config: Optional[SequenceConfig] = None
    centers: Optional[torch.Tensor] = None
    value_map: Optional[Dict[str, float]] = None

    @model_validator(mode="after")
    def check_frames(self) -> "Sequence":
        if self.frames.dim() != 3 or self.frames.shape[0] < 1:
            raise ValueError(f"frames must be a nonempty (L, H, W) stack, got {tuple(self.frames.shape)}")
        if self.frames.numel() and (float(self.frames.min()) < 0.0 or float(self.frames.max()) > 1.0):
            raise ValueError("frame values must lie in [0, 1]")
        return self

    @property
    def length(self) -> int:
        return int(self.frames.shape[0])

    @property
    def shape(self):
        return int(self.frames.shape[1]), int(self.frames.shape[2])
