# app/services/sequence_service.py
import math
from typing import List

import torch
from loguru import logger

from app.config.runtime import make_generator
from app.models.enums import SequenceKind
from app.schemas.sequences import Sequence, SequenceConfig
from app.utils.exceptions import ConfigurationError

# AR(1) values are mapped to [0, 1] as offset + scale * x, covering +-4 standard deviations.
AR1_OFFSET = 0.5
AR1_SCALE = 0.125

BLOB_WIDTH_RANGE = (2.0, 5.0)
BLOB_AMPLITUDE_RANGE = (0.5, 1.0)


def _uniform(gen: torch.Generator, n: int, low: float, high: float) -> torch.Tensor:
    return low + (high - low) * torch.rand(n, generator=gen, dtype=torch.float64)


class SequenceService:
    """Synthetic sequences with controllable temporal correlation and motion."""

    def generate(self, config: SequenceConfig) -> Sequence:
        if config.kind == SequenceKind.AR1:
            return self.gen_ar1(config, config.seed)
        return self.gen_blobs(config, config.seed)

    def gen_ar1(self, config: SequenceConfig, seed: int) -> Sequence:
        """x^{t+1} = rho x^t + sqrt(1 - rho^2) w with unit stationary variance per pixel."""
        if config.kind != SequenceKind.AR1:
            raise ConfigurationError(f"gen_ar1 needs kind ar1-gaussian, got {config.kind.value}")
        gen = make_generator(seed)
        shape = (config.height, config.width)
        innovation = math.sqrt(1.0 - config.rho ** 2)
        x = torch.randn(shape, generator=gen, dtype=torch.float64)
        frames = [x]
        for _ in range(1, config.length):
            w = torch.randn(shape, generator=gen, dtype=torch.float64)
            x = config.rho * x + innovation * w
            frames.append(x)
        data = (AR1_OFFSET + AR1_SCALE * torch.stack(frames)).clamp(0.0, 1.0)
        return Sequence(
            frames=data.to(torch.float32),
            config=config,
            value_map={"offset": AR1_OFFSET, "scale": AR1_SCALE},
        )

    def _margins(self, widths: torch.Tensor, height: int, width: int) -> torch.Tensor:
        # blobs stay at least 3 widths inside the frame where the frame allows it
        limit = torch.tensor([height / 4.0, width / 4.0], dtype=torch.float64)
        return torch.minimum(3.0 * widths[:, None], limit[None, :])

    def gen_blobs(self, config: SequenceConfig, seed: int) -> Sequence:
        """Gaussian bumps moving at motion_level px/frame with specular reflection."""
        if config.kind != SequenceKind.BLOBS:
            raise ConfigurationError(f"gen_blobs needs kind moving-blobs, got {config.kind.value}")
        gen = make_generator(seed)
        n = config.num_blobs
        height, width = config.height, config.width
        widths = _uniform(gen, n, *BLOB_WIDTH_RANGE)
        amplitudes = _uniform(gen, n, *BLOB_AMPLITUDE_RANGE)
        margins = self._margins(widths, height, width)
        upper = torch.tensor([height - 1.0, width - 1.0], dtype=torch.float64)[None, :] - margins
        start = margins + (upper - margins) * torch.rand((n, 2), generator=gen, dtype=torch.float64)
        angles = _uniform(gen, n, 0.0, 2.0 * math.pi)
        velocity = config.motion_level * torch.stack([torch.sin(angles), torch.cos(angles)], dim=1)

        rows = torch.arange(height, dtype=torch.float64)[:, None]
        cols = torch.arange(width, dtype=torch.float64)[None, :]
        centers: List[torch.Tensor] = []
        frames: List[torch.Tensor] = []
        position = start.clone()
        for t in range(config.length):
            if t > 0:
                position, velocity = self._advance(position, velocity, margins, upper)
            centers.append(position.clone())
            frame = torch.zeros((height, width), dtype=torch.float64)
            for b in range(n):
                d2 = (rows - position[b, 0]) ** 2 + (cols - position[b, 1]) ** 2
                frame = frame + amplitudes[b] * torch.exp(-d2 / (2.0 * widths[b] ** 2))
            frames.append(frame.clamp(0.0, 1.0))

        logger.debug(f"Generated {config.length} blob frames at motion level {config.motion_level}")
        return Sequence(frames=torch.stack(frames).to(torch.float32), config=config, centers=torch.stack(centers))

    @staticmethod
    def _advance(position: torch.Tensor, velocity: torch.Tensor, lower: torch.Tensor, upper: torch.Tensor):
        position = position + velocity
        velocity = velocity.clone()
        # reflect until inside; a single bounce unless the box is narrower than one step
        for _ in range(8):
            below = position < lower
            above = position > upper
            if not bool(below.any() or above.any()):
                break
            position = torch.where(below, 2.0 * lower - position, position)
            position = torch.where(above, 2.0 * upper - position, position)
            velocity = torch.where(below | above, -velocity, velocity)
        position = torch.minimum(torch.maximum(position, lower), upper)
        return position, velocity

    def motion(self, frames: torch.Tensor) -> List[float]:
        """Mean absolute difference to the previous frame; frame 0 gets 0."""
        if frames.dim() != 3:
            raise ConfigurationError(f"expected (L, H, W) frames, got {tuple(frames.shape)}")
        values = [0.0]
        for t in range(1, frames.shape[0]):
            values.append(float((frames[t].double() - frames[t - 1].double()).abs().mean()))
        return values


# Create a singleton instance
sequence_service = SequenceService()
