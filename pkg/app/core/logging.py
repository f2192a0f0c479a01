"""
Logging configuration for the diffusion-equivalence toolkit.

Configures console and rotating file logging with a per-run correlation ID
(`run_id`) and the name of the suite currently executing (`suite`). Every log
entry carries both, so a harness run with several suites can be traced and a
dropped replicate can be replayed from its log line alone.

"""

import logging
from logging.config import dictConfig
import os
import uuid
from app.core.config import settings


class RunContextFilter(logging.Filter):
    """
    Logging filter that attaches `run_id` and `suite` to each log record.

    Records that already carry the attributes are left untouched; otherwise
    the filter's current values are used ('-' outside of a run).

    Attributes:
        run_id (str): Correlation ID of the current harness run.
        suite (str): Name of the suite currently executing.
    """

    def __init__(self, name: str = "") -> None:
        """Initialize the filter with '-' placeholders."""
        super().__init__(name)
        self.run_id = "-"
        self.suite = "-"

    def filter(self, record: logging.LogRecord) -> bool:
        """
        Inject the run context into the log record if missing.

        Args:
            record (logging.LogRecord): The log record being processed.

        Returns:
            bool: Always True to allow the log record to proceed.
        """
        if not hasattr(record, "run_id"):
            record.run_id = self.run_id
        if not hasattr(record, "suite"):
            record.suite = self.suite
        return True

    def reset(self) -> None:
        self.run_id = "-"
        self.suite = "-"


# Global run-context filter (injected into all handlers)
RUN_CONTEXT_FILTER = RunContextFilter()


def setup_logging(level: str | None = None, log_file: str | None = None) -> None:
    """
    Configure logging for the toolkit.

    Sets up a console handler and, unless disabled through settings, a
    `RotatingFileHandler`. Adds the global `RUN_CONTEXT_FILTER` to all handlers.

    Log format:
        timestamp | LEVEL | logger_name | run=<run_id> suite=<suite> | message

    Args:
        level (str | None): Overrides `settings.LOG_LEVEL`.
        log_file (str | None): Overrides `settings.LOG_FILE`.

    Raises:
        OSError: If the log directory cannot be created.
    """
    log_level = (level or settings.LOG_LEVEL).upper()
    log_file = log_file or settings.LOG_FILE

    handlers: dict[str, dict] = {
        "console": {
            "class": "logging.StreamHandler",
            "formatter": "console",
            "level": log_level,
        },
    }
    if settings.LOG_TO_FILE:
        os.makedirs(os.path.dirname(log_file) or ".", exist_ok=True)
        handlers["file"] = {
            "class": "logging.handlers.RotatingFileHandler",
            "filename": log_file,
            "maxBytes": 10_000_000,   # ~10MB
            "backupCount": 5,
            "formatter": "console",
            "level": log_level,
        }

    dictConfig({
        "version": 1,
        "disable_existing_loggers": False,
        "formatters": {
            "console": {
                "format": "%(asctime)s | %(levelname)s | %(name)s | run=%(run_id)s suite=%(suite)s | %(message)s"
            }
        },
        "handlers": handlers,
        "root": {
            "handlers": list(handlers),
            "level": log_level
        },
    })

    root = logging.getLogger()
    for h in root.handlers:
        h.addFilter(RUN_CONTEXT_FILTER)


def new_run_id() -> str:
    """
    Generate a new random run ID.

    Returns:
        str: A short 8-character hex string suitable for tagging logs.
    """
    return uuid.uuid4().hex[:8]
