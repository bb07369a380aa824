import time

from loguru import logger

from app.config.config_utils import get_logging_config

from .logger_config import LoggerConfig, LoggerUtils


def setup_logging(settings):
    """Install the loguru sinks described by settings"""
    config = LoggerConfig(settings, get_logging_config())
    logger.debug(
        f"{settings.app_name} {settings.app_version} logging to {', '.join(settings.get_log_sinks()) or 'nowhere'}",
        extra={"environment": settings.environment, "sinks": len(config.sink_ids)},
    )
    return logger


class LogPerformance:
    """Times a block; the duration lands in the performance log on success."""

    def __init__(self, operation: str, **kwargs):
        self.operation = operation
        self.kwargs = kwargs
        self.start_time = 0.0
        self.duration = 0.0

    def __enter__(self):
        self.start_time = time.perf_counter()
        return self

    def __exit__(self, exc_type, exc_val, exc_tb):
        self.duration = time.perf_counter() - self.start_time
        if exc_type is None:
            LoggerUtils.log_performance(self.operation, self.duration, **self.kwargs)
        else:
            logger.error(
                f"{self.operation} failed after {self.duration:.3f}s: {exc_type.__name__}",
                extra={"performance": True, "operation": self.operation, "error_type": exc_type.__name__, **self.kwargs},
            )
        return False
