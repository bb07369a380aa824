# app/services/measurement_service.py
from typing import Optional, Tuple

import torch
from loguru import logger

from app.config.runtime import make_generator
from app.models.enums import OperatorKind
from app.schemas.measurement import LinearOperator, Observation
from app.services.diffusion_service import round_half_up
from app.utils.exceptions import ConfigurationError, ShapeMismatchError


class MeasurementService:
    """Selection operators for scan-line subsampling and their adjoints."""

    def make_column_mask(
        self,
        width: int,
        keep_fraction: float,
        seed: int,
        height: Optional[int] = None,
        noise_std: float = 0.0,
        mask_id: str = "",
    ) -> LinearOperator:
        """Keep keep_fraction * width columns, rounded half up, drawn uniformly."""
        if keep_fraction <= 0 or keep_fraction > 1:
            raise ConfigurationError(f"keep_fraction must lie in (0, 1], got {keep_fraction}")
        if width < 1:
            raise ConfigurationError(f"width must be positive, got {width}")
        height = width if height is None else height
        kept = max(round_half_up(keep_fraction * width), 1)
        order = torch.randperm(width, generator=make_generator(seed))
        columns = tuple(sorted(int(c) for c in order[:kept]))
        mask = torch.zeros((height, width), dtype=torch.bool)
        mask[:, list(columns)] = True
        logger.debug(f"Column mask {mask_id or seed}: kept {kept}/{width} columns")
        return LinearOperator(
            kind=OperatorKind.COLUMN_MASK, mask=mask, columns=columns, noise_std=noise_std, mask_id=mask_id
        )

    def make_pixel_mask(
        self, shape: Tuple[int, int], keep_fraction: float, seed: int, noise_std: float = 0.0, mask_id: str = ""
    ) -> LinearOperator:
        if keep_fraction <= 0 or keep_fraction > 1:
            raise ConfigurationError(f"keep_fraction must lie in (0, 1], got {keep_fraction}")
        height, width = shape
        total = height * width
        kept = max(round_half_up(keep_fraction * total), 1)
        order = torch.randperm(total, generator=make_generator(seed))
        mask = torch.zeros(total, dtype=torch.bool)
        mask[order[:kept]] = True
        return LinearOperator(
            kind=OperatorKind.PIXEL_MASK, mask=mask.reshape(height, width), noise_std=noise_std, mask_id=mask_id
        )

    def make_identity(self, shape: Tuple[int, int], noise_std: float = 0.0, mask_id: str = "") -> LinearOperator:
        return LinearOperator(
            kind=OperatorKind.IDENTITY,
            mask=torch.ones(shape, dtype=torch.bool),
            noise_std=noise_std,
            mask_id=mask_id or "identity",
        )

    def from_columns(
        self, columns: Tuple[int, ...], shape: Tuple[int, int], noise_std: float = 0.0, mask_id: str = ""
    ) -> LinearOperator:
        """Rebuild a column-mask operator from persisted kept-column indices."""
        height, width = shape
        if any(c < 0 or c >= width for c in columns):
            raise ConfigurationError(f"column index out of range for width {width}")
        mask = torch.zeros((height, width), dtype=torch.bool)
        mask[:, list(columns)] = True
        return LinearOperator(
            kind=OperatorKind.COLUMN_MASK,
            mask=mask,
            columns=tuple(sorted(columns)),
            noise_std=noise_std,
            mask_id=mask_id,
        )

    def _check_field(self, op: LinearOperator, x: torch.Tensor) -> None:
        if tuple(x.shape[-2:]) != op.shape:
            raise ShapeMismatchError(f"field shape {tuple(x.shape[-2:])} does not match operator {op.shape}")

    def apply_forward(self, op: LinearOperator, x: torch.Tensor) -> torch.Tensor:
        """Kept coordinates in row-major order, shape (..., m)."""
        self._check_field(op, x)
        return x[..., op.mask]

    def apply_adjoint(self, op: LinearOperator, y: torch.Tensor) -> torch.Tensor:
        """Scatter y back onto the kept coordinates, zeros elsewhere."""
        if y.shape[-1] != op.m:
            raise ShapeMismatchError(f"measurement length {y.shape[-1]} != operator m {op.m}")
        out = torch.zeros(y.shape[:-1] + op.shape, dtype=y.dtype)
        out[..., op.mask] = y
        return out

    def observe(self, op: LinearOperator, x: torch.Tensor, seed: int, frame_index: int = 0) -> Observation:
        """y = A x + noise_std * g with g ~ N(0, I) drawn from the seed."""
        y = self.apply_forward(op, x)
        if op.noise_std > 0:
            g = torch.randn(y.shape, generator=make_generator(seed), dtype=y.dtype)
            y = y + op.noise_std * g
        return Observation(values=y, operator=op, frame_index=frame_index)

    def zero_fill(self, op: LinearOperator, y: torch.Tensor) -> torch.Tensor:
        return self.apply_adjoint(op, y)

    def adjoint_fill(self, op: LinearOperator, y: torch.Tensor) -> torch.Tensor:
        """Deterministic estimate g(y): dropped columns linearly interpolated from kept ones.

        Columns outside the kept range copy the nearest kept column. Pixel masks fall
        back to zero fill.
        """
        if op.kind == OperatorKind.IDENTITY:
            if y.shape[-1] != op.m:
                raise ShapeMismatchError(f"measurement length {y.shape[-1]} != operator m {op.m}")
            return y.reshape(y.shape[:-1] + op.shape).clone()
        if op.kind == OperatorKind.PIXEL_MASK:
            return self.zero_fill(op, y)

        filled = self.apply_adjoint(op, y)
        height, width = op.shape
        kept = torch.tensor(op.columns, dtype=torch.long)
        cols = torch.arange(width)
        # index of the first kept column >= c
        right_pos = torch.searchsorted(kept, cols).clamp(max=len(kept) - 1)
        left_pos = (right_pos - (kept[right_pos] > cols).long()).clamp(min=0)
        left, right = kept[left_pos], kept[right_pos]
        span = (right - left).to(y.dtype)
        weight = torch.where(span > 0, (cols - left).to(y.dtype) / span.clamp(min=1), torch.zeros_like(span))
        interp = filled[..., :, left] * (1 - weight) + filled[..., :, right] * weight
        return interp


# Create a singleton instance
measurement_service = MeasurementService()
