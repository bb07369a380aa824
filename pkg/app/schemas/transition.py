from collections import deque
from typing import Deque, List, Optional, Tuple

import torch

from app.utils.exceptions import MissingContextError, ShapeMismatchError


class HistoryBuffer:
    """Ring buffer of the K most recent model-space frames, oldest first."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError(f"history capacity must be positive, got {capacity}")
        self.capacity = capacity
        self._frames: Deque[torch.Tensor] = deque(maxlen=capacity)
        self._indices: Deque[int] = deque(maxlen=capacity)

    def __len__(self) -> int:
        return len(self._frames)

    @property
    def frame_shape(self) -> Optional[Tuple[int, ...]]:
        return tuple(self._frames[0].shape) if self._frames else None

    @property
    def indices(self) -> List[int]:
        return list(self._indices)

    def push(self, frame: torch.Tensor, frame_index: Optional[int] = None) -> None:
        if self._frames and tuple(frame.shape) != self.frame_shape:
            raise ShapeMismatchError(f"frame shape {tuple(frame.shape)} != history shape {self.frame_shape}")
        if frame_index is None:
            frame_index = self._indices[-1] + 1 if self._indices else 0
        if self._indices and frame_index <= self._indices[-1]:
            raise ValueError(f"frame {frame_index} does not follow frame {self._indices[-1]}")
        self._frames.append(frame.detach())
        self._indices.append(frame_index)

    def last(self, n: int = 1) -> List[torch.Tensor]:
        if not self._frames:
            raise MissingContextError("history is empty")
        return list(self._frames)[-n:]

    def frames(self) -> List[torch.Tensor]:
        return list(self._frames)

    def padded(self) -> torch.Tensor:
        """Exactly K frames stacked (K, H, W); short histories repeat the oldest frame."""
        if not self._frames:
            raise MissingContextError("history is empty")
        frames = list(self._frames)
        pad = [frames[0]] * (self.capacity - len(frames))
        return torch.stack(pad + frames)

    def clear(self) -> None:
        self._frames.clear()
        self._indices.clear()
