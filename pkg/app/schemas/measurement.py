from typing import Optional, Tuple

import torch
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from app.models.enums import OperatorKind
from app.schemas.validators import ConfigValidators


class LinearOperator(BaseModel):
    """Selection operator A: keeps a subset of pixels of an H x W field.

    ``mask`` is always the full H x W boolean grid; for column masks ``columns``
    additionally lists the kept columns in ascending order.
    """

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    kind: OperatorKind
    mask: torch.Tensor = Field(..., description="Boolean H x W grid of kept pixels")
    columns: Optional[Tuple[int, ...]] = Field(None, description="Kept columns for column masks")
    noise_std: float = Field(0.0, ge=0, description="Standard deviation of the measurement noise")
    mask_id: str = Field("", description="Identifier recorded in run reports")

    @field_validator("mask")
    @classmethod
    def validate_mask(cls, v: torch.Tensor) -> torch.Tensor:
        if v.dim() != 2:
            raise ValueError("mask must be a 2-D grid")
        return ConfigValidators.validate_mask(v)

    @model_validator(mode="after")
    def check_columns(self) -> "LinearOperator":
        if self.kind == OperatorKind.COLUMN_MASK:
            if not self.columns:
                raise ValueError("column-mask operators need their kept columns")
            if list(self.columns) != sorted(set(self.columns)):
                raise ValueError("kept columns must be strictly ascending")
        return self

    @property
    def shape(self) -> Tuple[int, int]:
        return int(self.mask.shape[0]), int(self.mask.shape[1])

    @property
    def m(self) -> int:
        """Number of measured coordinates."""
        return int(self.mask.sum())


class Observation(BaseModel):
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    values: torch.Tensor = Field(..., description="Measurements y, shape (..., m)")
    operator: LinearOperator
    frame_index: int = Field(0, ge=0)

    @model_validator(mode="after")
    def check_length(self) -> "Observation":
        if self.values.shape[-1] != self.operator.m:
            raise ValueError(f"observation has {self.values.shape[-1]} values, operator keeps {self.operator.m}")
        return self
