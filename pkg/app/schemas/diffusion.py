from pydantic import BaseModel, ConfigDict, Field, model_validator

from app.schemas.validators import ConfigValidators


class NoiseSchedule(BaseModel):
    """Linear beta ramp of the variance-preserving SDE and its step discretization."""

    model_config = ConfigDict(frozen=True)

    beta_min: float = Field(..., description="Rate per unit diffusion time at tau = 0")
    beta_max: float = Field(..., description="Rate at tau = T")
    horizon_T: float = Field(..., description="Total diffusion time")
    steps_N: int = Field(..., description="Full-trajectory discretization count")

    @model_validator(mode="after")
    def check_ramp(self) -> "NoiseSchedule":
        ConfigValidators.validate_positive(self.beta_min, "beta_min")
        ConfigValidators.validate_positive(self.horizon_T, "horizon_T")
        if self.beta_max < self.beta_min:
            raise ValueError(f"beta_max ({self.beta_max}) must be >= beta_min ({self.beta_min})")
        if self.steps_N < 1:
            raise ValueError(f"steps_N must be >= 1, got {self.steps_N}")
        return self

    @property
    def step_size(self) -> float:
        return self.horizon_T / self.steps_N

    def beta(self, tau: float) -> float:
        return self.beta_min + (self.beta_max - self.beta_min) * (tau / self.horizon_T)

    def integral(self, tau: float) -> float:
        """Closed-form integral of beta over [0, tau]."""
        return self.beta_min * tau + 0.5 * (self.beta_max - self.beta_min) * tau * tau / self.horizon_T

    def tau_at(self, step_index: int) -> float:
        """Grid time of a step index (index N is the horizon)."""
        return step_index * self.horizon_T / self.steps_N


class Rates(BaseModel):
    """Signal and noise rates at one diffusion time."""

    model_config = ConfigDict(frozen=True)

    alpha: float = Field(..., ge=0, le=1)
    sigma: float = Field(..., ge=0, le=1)
