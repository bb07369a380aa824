from typing import Tuple

from pydantic import BaseModel, ConfigDict, Field, model_validator

from app.schemas.validators import ConfigValidators


class TrainConfig(BaseModel):
    """Optimizer settings shared by score and transition training."""

    model_config = ConfigDict(frozen=True)

    learning_rate: float = Field(2e-3, gt=0, description="Adam learning rate")
    batch_size: int = Field(32, ge=1, description="Samples per gradient step")
    iterations: int = Field(2000, ge=0, description="Gradient steps (0 leaves parameters unchanged)")
    seed: int = Field(0, ge=0, lt=2**64, description="Seed for batch order and noise draws")
    log_every: int = Field(100, ge=1, description="Iterations between progress log lines")


class DenoiserConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    channels: int = Field(32, ge=1, description="Hidden channels of every convolution stage")
    embedding_dim: int = Field(32, ge=2, description="Width of the sinusoidal tau embedding")
    horizon_T: float = Field(1.0, gt=0, description="Diffusion horizon used to scale tau")

    @model_validator(mode="after")
    def check_embedding(self) -> "DenoiserConfig":
        if self.embedding_dim % 2:
            raise ValueError("embedding_dim must be even")
        return self


class TubeletConfig(BaseModel):
    """Tubelet partition and attention widths of the next-frame predictor."""

    model_config = ConfigDict(frozen=True)

    t_time: int = Field(2, ge=1)
    t_h: int = Field(4, ge=1)
    t_w: int = Field(4, ge=1)
    embed_dim: int = Field(64, ge=1)
    num_layers: int = Field(2, ge=1)
    num_heads: int = Field(4, ge=1)

    @model_validator(mode="after")
    def check_heads(self) -> "TubeletConfig":
        ConfigValidators.validate_divides(self.num_heads, self.embed_dim, "num_heads must divide embed_dim")
        return self

    @property
    def tubelet(self) -> Tuple[int, int, int]:
        return self.t_time, self.t_h, self.t_w

    def validate_volume(self, context_k: int, height: int, width: int) -> None:
        ConfigValidators.validate_divides(self.t_time, context_k, "t_time must divide K")
        ConfigValidators.validate_divides(self.t_h, height, "t_h must divide H")
        ConfigValidators.validate_divides(self.t_w, width, "t_w must divide W")

    def num_tokens(self, context_k: int, height: int, width: int) -> int:
        self.validate_volume(context_k, height, width)
        return (context_k // self.t_time) * (height // self.t_h) * (width // self.t_w)


class TransitionSpec(BaseModel):
    """Everything needed to rebuild a tubelet predictor from a checkpoint."""

    model_config = ConfigDict(frozen=True)

    context_k: int = Field(4, ge=1)
    height: int = Field(32, ge=1)
    width: int = Field(32, ge=1)
    tubelet: TubeletConfig = Field(default_factory=TubeletConfig)

    @model_validator(mode="after")
    def check_volume(self) -> "TransitionSpec":
        self.tubelet.validate_volume(self.context_k, self.height, self.width)
        return self


class ScoreTrainConfig(TrainConfig):
    """``train-score`` document: optimizer settings plus the denoiser architecture."""

    denoiser: DenoiserConfig = Field(default_factory=DenoiserConfig)


class TransitionTrainConfig(TrainConfig):
    """``train-transition`` document; frame size is taken from the training data."""

    context_k: int = Field(4, ge=1)
    tubelet: TubeletConfig = Field(default_factory=TubeletConfig)
