from loguru import logger

from app.config.runtime import runtime_manager


def shutdown_event():
    """
    Shutdown hook run after every CLI command.
    Releases the runtime and flushes queued log records.
    """
    info = runtime_manager.runtime_info()
    runtime_manager.close()
    logger.debug(f"Application shutdown completed after {info['uptime_s']}s")
    logger.complete()
