from typing import Any, Dict, List, Optional, Sequence

import torch
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from app.models.enums import InitVariant, JacobianMode, Normalization
from app.schemas.measurement import Observation
from app.schemas.transition import HistoryBuffer


class GuidanceConfig(BaseModel):
    """DPS data-consistency weight and how its gradient is linearized."""

    model_config = ConfigDict(frozen=True)

    zeta_scale: float = Field(1.0, gt=0, description="Step-size numerator")
    normalization: Normalization = Normalization.RESIDUAL_NORM
    jacobian_mode: JacobianMode = JacobianMode.IDENTITY


class InitStrategy(BaseModel):
    """Where a frame's trajectory starts and around which mean.

    ``previous`` is the model-space posterior estimate of the previous frame (SeqDiff),
    ``observation`` the current measurement (CCDF), ``transition`` plus ``history`` the
    next-frame predictor and its inputs (SeqDiff+). ``n_steps`` gives Vanilla a coarser
    grid over the whole horizon.
    """

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    variant: InitVariant
    tau_prime: Optional[float] = Field(None, gt=0, description="Initialization time; the horizon for Vanilla")
    n_steps: Optional[int] = Field(None, ge=1, description="Reduced step count for Vanilla")
    previous: Optional[torch.Tensor] = None
    observation: Optional[Observation] = None
    transition: Optional[Any] = None
    history: Optional[HistoryBuffer] = None

    @model_validator(mode="after")
    def check_variant(self) -> "InitStrategy":
        if self.variant != InitVariant.VANILLA and self.tau_prime is None:
            raise ValueError(f"{self.variant.value} needs tau_prime")
        if self.variant != InitVariant.VANILLA and self.n_steps is not None:
            raise ValueError("n_steps only applies to vanilla")
        return self


class TrajectoryState(BaseModel):
    """Model-space x_tau on a reverse trajectory.

    ``step_index`` counts the remaining steps; the current time is step_index * step_size.
    ``estimate`` is the Tweedie estimate from the most recent score evaluation (the
    initialization mean before any step ran).
    """

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    x: torch.Tensor
    step_index: int = Field(..., ge=0)
    step_size: float = Field(..., gt=0)
    generator: torch.Generator
    estimate: torch.Tensor

    @property
    def tau(self) -> float:
        return self.step_index * self.step_size


class FrameRecord(BaseModel):
    """Diagnostics of one reconstructed frame."""

    model_config = ConfigDict(frozen=True)

    frame_index: int
    strategy: InitVariant = Field(..., description="Strategy actually used for this frame")
    n_prime: int = Field(..., ge=0, description="Reverse steps run")
    score_evaluations: int = Field(..., ge=0)
    wall_s: float = Field(..., ge=0)
    mask_id: str = ""


class ReconstructionResult(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    frames: List[torch.Tensor] = Field(..., description="Data-space posterior estimates")
    records: List[FrameRecord]


class AdaptiveStepPolicy(BaseModel):
    """Maps measured motion to a step count via a best-N'-per-motion table.

    ``motion_levels`` are bin centres in ascending order; a motion value takes the step
    count of the nearest centre. Frames with fewer than two past estimates use ``default``.
    """

    model_config = ConfigDict(frozen=True)

    motion_levels: List[float]
    steps: List[int]
    default: int = Field(4, ge=1)

    @field_validator("steps")
    @classmethod
    def validate_steps(cls, v: List[int]) -> List[int]:
        if any(s < 1 for s in v):
            raise ValueError("step counts must be positive")
        return v

    @model_validator(mode="after")
    def check_table(self) -> "AdaptiveStepPolicy":
        if not self.motion_levels or len(self.motion_levels) != len(self.steps):
            raise ValueError("motion_levels and steps must be nonempty and of equal length")
        if list(self.motion_levels) != sorted(self.motion_levels):
            raise ValueError("motion_levels must be ascending")
        return self

    @classmethod
    def from_best_table(cls, best: Dict[float, int], default: int = 4) -> "AdaptiveStepPolicy":
        levels = sorted(best)
        return cls(motion_levels=levels, steps=[best[m] for m in levels], default=default)

    def choose(self, motion_value: Optional[float]) -> int:
        if motion_value is None:
            return self.default
        distances: Sequence[float] = [abs(motion_value - m) for m in self.motion_levels]
        return self.steps[distances.index(min(distances))]
