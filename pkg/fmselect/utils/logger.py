"""
Run Logging System
Console and JSON-lines logging for fits, tuning sweeps and benchmark studies.
"""

import json
import logging
import logging.handlers
import traceback
from datetime import datetime, timezone
from enum import Enum
from pathlib import Path
from typing import Any, Dict, Optional

import colorlog


class LogType(Enum):
    """Log channels for the different stages of a run."""
    SYSTEM = "system"
    DATA = "data"
    FIT = "fit"
    TUNING = "tuning"
    BENCHMARK = "benchmark"
    ERROR = "error"


CONSOLE_FORMAT = "%(log_color)s%(asctime)s - %(name)s - %(levelname)s%(reset)s - %(message)s"


def setup_logging(level: str = "INFO", log_dir: Optional[Path] = None) -> None:
    """Configure the ``fmselect`` logger hierarchy.

    Args:
        level: Console and file log level name
        log_dir: When given, a rotating JSON-lines file is written there as well
    """
    root = logging.getLogger("fmselect")
    root.setLevel(getattr(logging, level.upper(), logging.INFO))
    root.handlers.clear()
    root.propagate = False

    console_handler = colorlog.StreamHandler()
    console_handler.setFormatter(colorlog.ColoredFormatter(CONSOLE_FORMAT))
    root.addHandler(console_handler)

    if log_dir is not None:
        log_dir = Path(log_dir)
        log_dir.mkdir(parents=True, exist_ok=True)
        file_handler = logging.handlers.RotatingFileHandler(
            log_dir / "fmselect.log",
            maxBytes=10 * 1024 * 1024,
            backupCount=5,
        )
        file_handler.setFormatter(JsonFormatter())
        root.addHandler(file_handler)


class RunLogger:
    """Structured event logger for a single CLI run."""

    def __init__(self, command: str):
        self.command = command
        self.session_id = datetime.now().strftime("%Y%m%d_%H%M%S")
        self.loggers = {
            log_type: logging.getLogger(f"fmselect.run.{log_type.value}")
            for log_type in LogType
        }

    def log(self, log_type: LogType, level: str, message: str,
            extra_data: Optional[Dict[str, Any]] = None):
        """Log a message with structured data attached."""
        log_data = {
            "session_id": self.session_id,
            "command": self.command,
            "timestamp": datetime.now(timezone.utc).isoformat(),
            "log_type": log_type.value,
            "message": message,
            "extra_data": extra_data or {},
        }
        log_level = getattr(logging, level.upper(), logging.INFO)
        self.loggers[log_type].log(log_level, message, extra={"payload": log_data})

    def log_fit_event(self, event: str, summary: Dict[str, Any]):
        """Log a fit-level event (start, finish, selection)."""
        self.log(LogType.FIT, "INFO", f"Fit {event}", extra_data=summary)

    def log_tuning_event(self, event: str, summary: Dict[str, Any]):
        """Log a grid-search event."""
        self.log(LogType.TUNING, "INFO", f"Tuning {event}", extra_data=summary)

    def log_benchmark_event(self, event: str, summary: Dict[str, Any]):
        """Log a Monte Carlo study event."""
        self.log(LogType.BENCHMARK, "INFO", f"Benchmark {event}", extra_data=summary)

    def log_error(self, error: Exception, context: Optional[str] = None):
        """Log errors with full traceback."""
        self.log(
            LogType.ERROR,
            "ERROR",
            f"Error in {context}: {error}",
            extra_data={
                "error_type": type(error).__name__,
                "error_message": str(error),
                "traceback": traceback.format_exc(),
                "context": context,
            },
        )

    def log_performance(self, metric: str, value: float, unit: str = "s"):
        """Log timing metrics."""
        self.log(
            LogType.SYSTEM,
            "INFO",
            f"Performance: {metric} = {value:.3f}{unit}",
            extra_data={"metric": metric, "value": value, "unit": unit},
        )


class JsonFormatter(logging.Formatter):
    """JSON formatter for structured logging."""

    def format(self, record):
        """Format log record as JSON."""
        log_data = getattr(record, "payload", None)
        if log_data is None:
            log_data = {
                "timestamp": datetime.now(timezone.utc).isoformat(),
                "level": record.levelname,
                "logger": record.name,
                "message": record.getMessage(),
                "module": record.module,
                "function": record.funcName,
                "line": record.lineno,
            }
        else:
            log_data = dict(log_data, level=record.levelname)
        return json.dumps(log_data, ensure_ascii=False, default=str)
