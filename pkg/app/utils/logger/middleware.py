import functools
import time
import traceback
import uuid
from typing import Callable

import click
from loguru import logger

from .logger_config import LoggerUtils


class CommandLoggingMiddleware:
    """Wraps a click command callback with run-id context and timing logs"""

    def __init__(self, settings):
        self.settings = settings
        self.slow_threshold = settings.slow_command_seconds

    def __call__(self, func: Callable) -> Callable:
        @functools.wraps(func)
        def wrapper(*args, **kwargs):
            ctx = click.get_current_context(silent=True)
            command = ctx.info_name if ctx else func.__name__
            run_id = str(uuid.uuid4())
            LoggerUtils.set_run_context(run_id, command)

            logger.info(f"Command received: {command}", extra={
                "command": True,
                "run_id": run_id,
                "name": command,
                "params": {k: str(v) for k, v in kwargs.items()},
            })

            start_time = time.perf_counter()
            try:
                result = func(*args, **kwargs)
                duration = time.perf_counter() - start_time

                logger.info(f"Command completed: {command} in {duration:.2f}s", extra={
                    "command": True,
                    "performance": True,
                    "run_id": run_id,
                    "name": command,
                    "duration": duration,
                })

                if duration > self.slow_threshold:
                    logger.warning("Slow command detected", extra={
                        "performance": True,
                        "slow_command": True,
                        "run_id": run_id,
                        "name": command,
                        "duration": duration,
                        "threshold": self.slow_threshold,
                    })
                return result

            except Exception as e:
                duration = time.perf_counter() - start_time
                logger.error(f"Command failed: {command}", extra={
                    "command": True,
                    "error": True,
                    "run_id": run_id,
                    "name": command,
                    "duration": duration,
                    "error_type": type(e).__name__,
                    "error_message": str(e),
                    "traceback": traceback.format_exc(),
                })
                raise

            finally:
                LoggerUtils.clear_run_context()

        return wrapper
