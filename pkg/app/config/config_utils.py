"""
Settings accessors used by services and the CLI
"""

from app.config.settings import settings
from typing import Dict, Any


def get_schedule_config() -> Dict[str, Any]:
    """Get noise schedule parameters for make_schedule"""
    return {
        "beta_min": settings.beta_min,
        "beta_max": settings.beta_max,
        "horizon_T": settings.horizon_t,
        "steps_N": settings.steps_n,
    }


def get_guidance_config(analytic: bool) -> Dict[str, Any]:
    """Get DPS guidance parameters; the Jacobian mode depends on the score kind"""
    return {
        "zeta_scale": settings.zeta_scale,
        "normalization": settings.guidance_normalization,
        "jacobian_mode": settings.analytic_jacobian_mode if analytic else settings.network_jacobian_mode,
    }


def get_train_config() -> Dict[str, Any]:
    return {
        "learning_rate": settings.learning_rate,
        "batch_size": settings.batch_size,
        "iterations": settings.train_iterations,
    }


def get_tubelet_config() -> Dict[str, Any]:
    t, h, w = settings.get_tubelet_size()
    return {
        "t_time": t,
        "t_h": h,
        "t_w": w,
        "embed_dim": settings.embed_dim,
        "num_layers": settings.num_layers,
        "num_heads": settings.num_heads,
    }


def get_logging_config() -> Dict[str, Any]:
    """Get logging configuration for Loguru"""
    return {
        "level": settings.log_level,
        "rotation": settings.log_rotation,
        "retention": settings.log_retention,
        "compression": settings.log_compression,
        "backtrace": settings.log_backtrace,
        "colorize": settings.log_color,
        "serialize": settings.log_json,
        "sinks": settings.get_log_sinks(),
    }


def is_production() -> bool:
    """Check if running in production environment"""
    return settings.environment.lower() == "production"


def is_testing() -> bool:
    """Check if running in testing environment"""
    return settings.environment.lower() == "testing"
