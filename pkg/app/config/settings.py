from pydantic_settings import BaseSettings, SettingsConfigDict
from pydantic import Field, field_validator
from typing import Any, List, Tuple


class Settings(BaseSettings):
    """Configuration settings for the sampling engine."""

    model_config = SettingsConfigDict(
        env_file=".env",
        env_file_encoding="utf-8",
        case_sensitive=False,
        extra="ignore",
    )

    # Application Settings
    app_name: str = Field(default="seqdiff", description="Application name")
    app_description: str = Field(
        default="Sequential diffusion posterior sampling engine",
        description="Application description",
    )
    app_version: str = Field(default="1.0.0", description="Application version")

    # Environment
    environment: str = Field(default="development", description="Environment (development, production, testing)")
    debug: bool = Field(default=False, description="Debug mode")

    # Runtime
    torch_num_threads: int = Field(default=0, ge=0, description="Torch intra-op threads (0 keeps the torch default)")
    output_dir: str = Field(default="out", description="Default output directory for CLI artifacts")

    # Noise schedule
    beta_min: float = Field(default=0.1, gt=0, description="Linear beta ramp start")
    beta_max: float = Field(default=20.0, gt=0, description="Linear beta ramp end")
    horizon_t: float = Field(default=1.0, gt=0, description="Total diffusion time")
    steps_n: int = Field(default=100, ge=1, description="Full-trajectory step count")

    # Sampling
    default_n_prime: int = Field(default=4, ge=1, description="Shortened trajectory length for sequential strategies")
    zeta_scale: float = Field(default=1.0, gt=0, description="DPS guidance step-size numerator")
    guidance_normalization: str = Field(default="residual-norm", description="residual-norm or none")
    analytic_jacobian_mode: str = Field(default="exact-linearization", description="Jacobian mode for analytic scores")
    network_jacobian_mode: str = Field(default="identity-approximation", description="Jacobian mode for trained networks")
    psnr_cap: float = Field(default=99.0, gt=0, description="PSNR reported for zero error")
    keep_fraction: float = Field(default=0.2, gt=0, le=1, description="Fraction of observed columns")
    noise_std: float = Field(default=0.0, ge=0, description="Measurement noise standard deviation")

    # Score training
    learning_rate: float = Field(default=2e-3, gt=0, description="Adam learning rate")
    batch_size: int = Field(default=32, ge=1, description="Training batch size")
    train_iterations: int = Field(default=2000, ge=0, description="Training iterations")
    tau_floor_fraction: float = Field(default=1e-3, gt=0, lt=1, description="Lower bound of training tau as a fraction of T")
    denoiser_channels: int = Field(default=32, ge=1, description="Denoiser hidden channels")

    # Transition model
    context_k: int = Field(default=4, ge=1, description="History window K")
    tubelet_size: str = Field(default="2,4,4", description="Tubelet dims t,h,w (comma-separated)")
    embed_dim: int = Field(default=64, ge=1, description="Token embedding width")
    num_layers: int = Field(default=2, ge=1, description="Attention layers per stack")
    num_heads: int = Field(default=4, ge=1, description="Attention heads")

    # Logging Configuration
    log_level: str = Field(default="INFO", description="Logging level")
    log_file: str = Field(default="logs/seqdiff.log", description="Log file path")
    log_rotation: str = Field(default="10MB", description="Log rotation")
    log_retention: str = Field(default="7 days", description="Log retention")
    log_compression: bool = Field(default=False, description="Enable log compression")
    log_backtrace: bool = Field(default=True, description="Enable log backtrace")
    log_color: bool = Field(default=True, description="Enable colored logs")
    log_json: bool = Field(default=False, description="Enable JSON logging")
    log_console: bool = Field(default=True, description="Enable console logging")
    log_to_file: bool = Field(default=True, description="Enable file logging")

    # Exception Logging
    log_exception: bool = Field(default=True, description="Enable exception logging")
    log_exception_file: str = Field(default="logs/exception.log", description="Exception log file")
    log_exception_level: str = Field(default="ERROR", description="Exception log level")

    # Performance Logging
    log_performance_file: str = Field(default="logs/performance.log", description="Performance event log")
    slow_command_seconds: float = Field(default=60.0, gt=0, description="Commands slower than this are flagged")

    @field_validator("log_level", "log_exception_level", mode="before")
    @classmethod
    def normalize_level(cls, v: Any) -> str:
        level = str(v).strip().upper()
        if level not in {"TRACE", "DEBUG", "INFO", "SUCCESS", "WARNING", "ERROR", "CRITICAL"}:
            raise ValueError(f"Unknown log level: {v}")
        return level

    @field_validator("guidance_normalization", "analytic_jacobian_mode", "network_jacobian_mode", mode="before")
    @classmethod
    def normalize_choice(cls, v: Any) -> str:
        return str(v).strip().lower()

    @field_validator("tubelet_size")
    @classmethod
    def validate_tubelet_size(cls, v: str) -> str:
        parts = [p.strip() for p in v.split(",") if p.strip()]
        if len(parts) != 3 or not all(p.isdigit() and int(p) > 0 for p in parts):
            raise ValueError("tubelet_size must be three positive integers, e.g. '2,4,4'")
        return ",".join(parts)

    def get_tubelet_size(self) -> Tuple[int, int, int]:
        """Get tubelet_size as a tuple"""
        t, h, w = (int(p) for p in self.tubelet_size.split(","))
        return t, h, w

    def get_log_sinks(self) -> List[str]:
        sinks = []
        if self.log_console:
            sinks.append("console")
        if self.log_to_file:
            sinks.append(self.log_file)
        if self.log_exception:
            sinks.append(self.log_exception_file)
        return sinks


# Create settings instance
settings = Settings()
