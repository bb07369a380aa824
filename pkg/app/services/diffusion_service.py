# app/services/diffusion_service.py
import math
from typing import Tuple

import torch
from loguru import logger
from pydantic import ValidationError

from app.schemas.diffusion import NoiseSchedule, Rates
from app.utils.exceptions import ConfigurationError, ShapeMismatchError

# Slack on the [0, T] range check for grid times accumulated in floating point.
_TAU_TOLERANCE = 1e-12


def make_schedule(beta_min: float, beta_max: float, horizon_T: float, steps_N: int) -> NoiseSchedule:
    try:
        return NoiseSchedule(beta_min=beta_min, beta_max=beta_max, horizon_T=horizon_T, steps_N=steps_N)
    except ValidationError as e:
        logger.warning(f"Rejected noise schedule: {e.errors()[0]['msg']}")
        raise ConfigurationError(f"Invalid noise schedule: {e.errors()[0]['msg']}") from e


def rates_at(schedule: NoiseSchedule, tau: float) -> Rates:
    """Signal and noise rates with sigma^2 = 1 - exp(-int_0^tau beta)."""
    if tau < -_TAU_TOLERANCE or tau > schedule.horizon_T + _TAU_TOLERANCE:
        raise ConfigurationError(f"tau={tau} outside [0, {schedule.horizon_T}]")
    tau = min(max(tau, 0.0), schedule.horizon_T)
    integral = schedule.integral(tau)
    alpha = math.exp(-0.5 * integral)
    sigma = math.sqrt(-math.expm1(-integral))
    return Rates(alpha=alpha, sigma=sigma)


def rates_batch(schedule: NoiseSchedule, taus: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
    """Vectorized rates for a tensor of diffusion times."""
    integral = schedule.beta_min * taus + 0.5 * (schedule.beta_max - schedule.beta_min) * taus * taus / schedule.horizon_T
    alpha = torch.exp(-0.5 * integral)
    sigma = torch.sqrt(-torch.expm1(-integral))
    return alpha, sigma


def forward_diffuse(x0: torch.Tensor, rates: Rates, noise: torch.Tensor) -> torch.Tensor:
    if x0.shape != noise.shape:
        raise ShapeMismatchError(f"x0 shape {tuple(x0.shape)} != noise shape {tuple(noise.shape)}")
    return rates.alpha * x0 + rates.sigma * noise


def round_half_up(value: float) -> int:
    return int(math.floor(value + 0.5))


def steps_from_tau(schedule: NoiseSchedule, tau_prime: float) -> int:
    """N' = round(N tau'/T) clamped to [1, N]."""
    if tau_prime <= 0:
        raise ConfigurationError(f"tau_prime must be positive, got {tau_prime}")
    if tau_prime > schedule.horizon_T + _TAU_TOLERANCE:
        raise ConfigurationError(f"tau_prime={tau_prime} exceeds the horizon {schedule.horizon_T}")
    n_prime = round_half_up(schedule.steps_N * tau_prime / schedule.horizon_T)
    return min(max(n_prime, 1), schedule.steps_N)


def init_steps(schedule: NoiseSchedule, tau_prime: float) -> int:
    """Like steps_from_tau but without the lower clamp, so tau' below half a step gives 0."""
    if tau_prime <= 0:
        raise ConfigurationError(f"tau_prime must be positive, got {tau_prime}")
    n_prime = round_half_up(schedule.steps_N * tau_prime / schedule.horizon_T)
    return min(max(n_prime, 0), schedule.steps_N)


def tau_from_steps(schedule: NoiseSchedule, n_prime: int) -> float:
    """Inverse of steps_from_tau on the grid: tau' = N' T / N."""
    if not 1 <= n_prime <= schedule.steps_N:
        raise ConfigurationError(f"N'={n_prime} must lie in [1, {schedule.steps_N}]")
    return schedule.tau_at(n_prime)


def to_model_space(x: torch.Tensor) -> torch.Tensor:
    return 2.0 * x - 1.0


def to_data_space(z: torch.Tensor, clamp: bool = True) -> torch.Tensor:
    x = 0.5 * (z + 1.0)
    return x.clamp(0.0, 1.0) if clamp else x
