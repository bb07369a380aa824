from typing import List, Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator

from app.models.enums import InitVariant, MaskMode, TransitionVariant
from app.schemas.sampling import GuidanceConfig
from app.schemas.validators import ConfigValidators

REPORT_HEADER = ("sequence_id", "frame", "strategy", "n_prime", "psnr_db", "motion", "wall_s", "seed", "mask_id")


class RunReportRow(BaseModel):
    """One reconstructed frame."""

    model_config = ConfigDict(frozen=True)

    sequence_id: str
    frame: int = Field(..., ge=0)
    strategy: InitVariant
    n_prime: int = Field(..., ge=0)
    psnr_db: float
    motion: float = Field(..., ge=0)
    wall_s: float = Field(..., ge=0)
    seed: int = Field(..., ge=0)
    mask_id: str = ""

    def sort_key(self):
        return self.sequence_id, self.frame, self.strategy.value, self.n_prime


class SweepConfig(BaseModel):
    """Grid of a benchmark sweep; every cell owns a stream derived from master_seed."""

    model_config = ConfigDict(frozen=True)

    strategies: List[InitVariant] = Field(
        default_factory=lambda: [InitVariant.VANILLA, InitVariant.CCDF, InitVariant.SEQDIFF, InitVariant.SEQDIFF_PLUS]
    )
    n_prime_grid: List[int] = Field(default_factory=lambda: [1, 2, 4, 8, 16, 32, 100])
    motion_levels: List[float] = Field(default_factory=lambda: [0.5, 2.0, 4.0])
    splits: int = Field(3, ge=1)
    master_seed: int = Field(0, ge=0, lt=2**64)
    num_sequences: int = Field(10, ge=1, description="Sequences per split and motion level")
    length: int = Field(20, ge=1, description="Frames per sequence")
    height: int = Field(32, ge=1)
    width: int = Field(32, ge=1)
    num_blobs: int = Field(3, ge=1)
    keep_fraction: float = Field(0.2, description="Fraction of kept columns (0.2 = 80% masking)")
    noise_std: float = Field(0.0, ge=0)
    mask_mode: MaskMode = MaskMode.FIXED
    transition: TransitionVariant = TransitionVariant.TUBELET
    context_k: int = Field(4, ge=1)
    guidance: Optional[GuidanceConfig] = Field(None, description="Defaults to the settings for the score kind")
    record_wall_time: bool = Field(True, description="False writes wall_s = 0 for byte-reproducible reports")
    motion_bins: int = Field(5, ge=1, description="Bins of the best-N'-per-motion table")

    @field_validator("strategies")
    @classmethod
    def validate_strategies(cls, v: List[InitVariant]) -> List[InitVariant]:
        ConfigValidators.validate_grid([1] * len(v), "strategies")
        if len(set(v)) != len(v):
            raise ValueError("strategies must be distinct")
        return v

    @field_validator("n_prime_grid")
    @classmethod
    def validate_n_prime_grid(cls, v: List[int]) -> List[int]:
        return sorted(set(ConfigValidators.validate_grid(v, "n_prime_grid")))

    @field_validator("motion_levels")
    @classmethod
    def validate_motion_levels(cls, v: List[float]) -> List[float]:
        return ConfigValidators.validate_grid(v, "motion_levels", positive=False)

    @field_validator("keep_fraction")
    @classmethod
    def validate_keep_fraction(cls, v: float) -> float:
        return ConfigValidators.validate_fraction(v, "keep_fraction")
