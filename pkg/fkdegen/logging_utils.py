"""
Structured JSON logging utilities.
Produces one JSON object per line on stderr; stdout is reserved for reports.
"""
import json
import logging
import sys
import time
from datetime import datetime, timezone
from typing import Any, Dict, Optional


RUN_FIELDS = (
    "run_id",
    "subcommand",
    "stage",
    "n_paths",
    "elapsed_ms",
    "scenario",
    "label",
    "iterations",
    "residual",
    "result",
    "detail",
)


class JSONFormatter(logging.Formatter):
    """Custom formatter that outputs JSON log records."""

    def format(self, record: logging.LogRecord) -> str:
        """Format a log record as a JSON string."""
        log_data: Dict[str, Any] = {
            "ts": datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%S.%f")[:-3] + "Z",
            "level": record.levelname,
            "message": record.getMessage(),
        }

        for field in RUN_FIELDS:
            if hasattr(record, field):
                log_data[field] = getattr(record, field)

        if record.exc_info:
            log_data["exception"] = self.formatException(record.exc_info)

        return json.dumps(log_data, ensure_ascii=False, default=str)


def setup_logger(name: str = "fkdegen", level: str = "INFO") -> logging.Logger:
    """
    Set up a JSON logger.

    Args:
        name: Logger name
        level: Log level (INFO, DEBUG, etc.)

    Returns:
        Configured logger instance
    """
    logger = logging.getLogger(name)
    logger.handlers = []

    log_level = getattr(logging, level.upper(), logging.INFO)
    logger.setLevel(log_level)

    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(JSONFormatter())
    logger.addHandler(handler)

    logger.propagate = False

    return logger


class RunLogger:
    """Helper that logs stages of one run with shared run fields."""

    def __init__(self, logger: logging.Logger, run_id: str, subcommand: str):
        self.logger = logger
        self.run_id = run_id
        self.subcommand = subcommand
        self._started: Dict[str, float] = {}

    def _extra(self, **fields: Any) -> Dict[str, Any]:
        extra: Dict[str, Any] = {"run_id": self.run_id, "subcommand": self.subcommand}
        extra.update({k: v for k, v in fields.items() if v is not None})
        return extra

    def stage_started(self, stage: str, **fields: Any) -> None:
        """Log the start of a stage and remember its start time."""
        self._started[stage] = time.perf_counter()
        self.logger.info("stage started", extra=self._extra(stage=stage, **fields))

    def stage_finished(self, stage: str, result: Optional[str] = None, **fields: Any) -> float:
        """
        Log the end of a stage.

        Args:
            stage: Stage name used in stage_started
            result: Short outcome label
            **fields: Extra run fields (n_paths, iterations, residual, ...)

        Returns:
            Elapsed milliseconds since the matching stage_started call
        """
        start = self._started.pop(stage, time.perf_counter())
        elapsed_ms = round((time.perf_counter() - start) * 1000.0, 2)
        self.logger.info(
            "stage finished",
            extra=self._extra(stage=stage, result=result, elapsed_ms=elapsed_ms, **fields),
        )
        return elapsed_ms

    def warning(self, message: str, **fields: Any) -> None:
        self.logger.warning(message, extra=self._extra(**fields))

    def error(self, message: str, **fields: Any) -> None:
        self.logger.error(message, extra=self._extra(**fields))


# Global logger instance
_logger: Optional[logging.Logger] = None


def get_logger() -> logging.Logger:
    """Get the global logger instance, creating it if necessary."""
    global _logger
    if _logger is None:
        from .config import get_settings
        settings = get_settings()
        _logger = setup_logger("fkdegen", settings.log_level)
    return _logger
