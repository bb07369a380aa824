import sys
from contextvars import ContextVar
from pathlib import Path
from typing import Any, Dict, List, Optional

from loguru import logger

# Context variables for command tracking
run_id_var: ContextVar[Optional[str]] = ContextVar("run_id", default=None)
command_var: ContextVar[Optional[str]] = ContextVar("command", default=None)

CONSOLE_FORMAT = (
    "<green>{time:HH:mm:ss.SSS}</green> | "
    "<level>{level: <8}</level> | "
    "<magenta>{extra[command]}:{extra[run]}</magenta> | "
    "<cyan>{name}</cyan>:<cyan>{line}</cyan> | "
    "<level>{message}</level>"
)
FILE_FORMAT = "{time:YYYY-MM-DD HH:mm:ss.SSS} | {level: <8} | {extra[command]}:{extra[run]} | {name}:{function}:{line} | {message}"


def _attach_run_context(record) -> None:
    """Stamp every record with the running command and a short run id."""
    run_id = run_id_var.get()
    record["extra"]["run"] = run_id[:8] if run_id else "-"
    record["extra"]["command"] = command_var.get() or "-"


def _payload(record) -> dict:
    # loguru nests the extra= keyword inside record["extra"]["extra"]
    return record["extra"].get("extra", {}) or {}


def _is_performance(record) -> bool:
    return "performance" in _payload(record)


def _rotation(value: str) -> str:
    """'10MB' -> '10 MB'; values loguru already understands pass through."""
    for unit in ("KB", "MB", "GB"):
        if value.endswith(unit) and not value.endswith(f" {unit}"):
            return f"{value[: -len(unit)]} {unit}"
    return value


class LoggerConfig:
    """Loguru sinks: console, run log, exception log and a JSON performance log."""

    def __init__(self, settings, options: Dict[str, Any]):
        self.settings = settings
        self.options = options
        self.sink_ids: List[int] = []
        self._setup_logger()

    def _add(self, sink, **kwargs) -> None:
        if isinstance(sink, str):
            Path(sink).parent.mkdir(parents=True, exist_ok=True)
        self.sink_ids.append(logger.add(sink, enqueue=True, catch=True, **kwargs))

    def _file_policy(self) -> Dict[str, Any]:
        return {"rotation": _rotation(self.options["rotation"]), "retention": self.options["retention"]}

    def _setup_logger(self):
        logger.remove()
        logger.configure(patcher=_attach_run_context)
        opts = self.options
        traces = {"backtrace": opts["backtrace"], "diagnose": self.settings.debug}

        if self.settings.log_console:
            if opts["serialize"]:
                self._add(sys.stderr, level=opts["level"], serialize=True, **traces)
            else:
                self._add(sys.stderr, level=opts["level"], format=CONSOLE_FORMAT, colorize=opts["colorize"], **traces)

        if self.settings.log_to_file:
            self._add(
                self.settings.log_file,
                level=opts["level"],
                format=FILE_FORMAT,
                serialize=opts["serialize"],
                compression="gz" if opts["compression"] else None,
                **self._file_policy(),
                **traces,
            )
            # training and sweep timings, kept apart from the run log
            self._add(
                self.settings.log_performance_file,
                level="DEBUG",
                serialize=True,
                filter=_is_performance,
                **self._file_policy(),
            )

        if self.settings.log_exception:
            self._add(
                self.settings.log_exception_file,
                level=self.settings.log_exception_level,
                format=FILE_FORMAT,
                **self._file_policy(),
                **traces,
            )


class LoggerUtils:
    """Run context and structured events shared by commands and services"""

    @staticmethod
    def set_run_context(run_id: str, command: Optional[str] = None):
        run_id_var.set(run_id)
        if command:
            command_var.set(command)

    @staticmethod
    def clear_run_context():
        run_id_var.set(None)
        command_var.set(None)

    @staticmethod
    def log_performance(operation: str, duration: float, **kwargs):
        logger.info(
            f"{operation} took {duration:.3f}s",
            extra={"performance": True, "operation": operation, "duration": duration, **kwargs},
        )

    @staticmethod
    def log_experiment_event(event: str, **kwargs):
        """Experiment milestones: datasets written, sweeps finished."""
        logger.info(f"Experiment: {event}", extra={"experiment_event": True, "event": event, **kwargs})

    @staticmethod
    def log_numerical_event(event: str, severity: str = "WARNING", **kwargs):
        """Numerical anomalies such as a diverged reverse step."""
        log_func = getattr(logger, severity.lower(), logger.warning)
        log_func(f"Numerical: {event}", extra={"numerical_event": True, "event": event, **kwargs})
