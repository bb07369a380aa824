from pathlib import Path

from loguru import logger

from app.config.runtime import runtime_manager
from app.config.settings import settings


def startup_event():
    """
    Startup hook run before every CLI command.
    Applies torch runtime settings and reports the environment.
    """
    logger.debug("Application is starting up...")
    try:
        runtime_manager.initialize()
    except Exception as e:
        logger.error(f"Torch runtime initialization failed: {e}")
        raise e

    logger.debug("Runtime configuration loaded", extra={
        "runtime": runtime_manager.runtime_info(),
        "environment": settings.environment,
        "output_dir": str(Path(settings.output_dir)),
    })
