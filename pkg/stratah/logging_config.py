"""
Structured logging for stratah.

Log lines are JSON objects on stderr so that reports written to stdout stay
machine readable. Every line carries the current operation label (for example
``simulate:paper_pattern1_n700``) when one is set with ``operation_context``.
"""

import json
import logging
import socket
import sys
from contextlib import contextmanager
from contextvars import ContextVar
from datetime import datetime, timezone
from typing import Iterator, Optional

APPLICATION = "stratah"

operation_var: ContextVar[Optional[str]] = ContextVar("operation", default=None)


class JSONFormatter(logging.Formatter):
    """Custom JSON formatter for structured logging"""

    def __init__(self, application: str = APPLICATION):
        super().__init__()
        self.application = application
        self.server = socket.gethostname()

    def format(self, record: logging.LogRecord) -> str:
        """Format log record as JSON"""
        log_entry = {
            "timestamp": datetime.fromtimestamp(record.created, tz=timezone.utc).isoformat(),
            "level": record.levelname.lower(),
            "msg": record.getMessage(),
            "application": self.application,
            "server": self.server,
            "location": f"{record.name}:{record.funcName}:{record.lineno}",
        }

        operation = operation_var.get()
        if operation:
            log_entry["operation"] = operation

        if hasattr(record, "extra_fields"):
            log_entry.update(record.extra_fields)

        if record.exc_info:
            log_entry["exception"] = self.formatException(record.exc_info)

        return json.dumps(log_entry, default=str)


class PlainFormatter(logging.Formatter):
    """Single-line key=value formatter for interactive terminals."""

    def format(self, record: logging.LogRecord) -> str:
        base = f"{record.levelname.lower():<7} {record.name}: {record.getMessage()}"
        fields = dict(getattr(record, "extra_fields", {}))
        operation = operation_var.get()
        if operation:
            fields = {"operation": operation, **fields}
        if fields:
            base += " " + " ".join(f"{key}={value}" for key, value in fields.items())
        if record.exc_info:
            base += "\n" + self.formatException(record.exc_info)
        return base


class StructuredLogger:
    """Wrapper for structured logging with context"""

    def __init__(self, name: str):
        self.logger = logging.getLogger(name)

    def _log(self, level: int, msg: str, exc_info: bool = False, **extra_fields):
        """Internal log method with extra fields"""
        if self.logger.isEnabledFor(level):
            record = self.logger.makeRecord(
                self.logger.name, level, "", 0, msg, (),
                sys.exc_info() if exc_info else None,
            )
            record.extra_fields = extra_fields
            self.logger.handle(record)

    def info(self, msg: str, **extra_fields):
        self._log(logging.INFO, msg, **extra_fields)

    def warning(self, msg: str, **extra_fields):
        self._log(logging.WARNING, msg, **extra_fields)

    def error(self, msg: str, **extra_fields):
        self._log(logging.ERROR, msg, **extra_fields)

    def debug(self, msg: str, **extra_fields):
        self._log(logging.DEBUG, msg, **extra_fields)

    def critical(self, msg: str, **extra_fields):
        self._log(logging.CRITICAL, msg, **extra_fields)


@contextmanager
def operation_context(operation: str) -> Iterator[None]:
    """Tag every log line emitted inside the block with ``operation``."""
    token = operation_var.set(operation)
    try:
        yield
    finally:
        operation_var.reset(token)


def setup_logging(log_level: str = "INFO", json_output: bool = True,
                  application: str = APPLICATION) -> StructuredLogger:
    """
    Configure the root logger with a single stderr handler.

    Calling it again replaces the previous handler, so the CLI can be invoked
    repeatedly in one process (tests do this).
    """
    root = logging.getLogger()
    for handler in list(root.handlers):
        if getattr(handler, "_stratah_handler", False):
            root.removeHandler(handler)

    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(JSONFormatter(application) if json_output else PlainFormatter())
    handler._stratah_handler = True
    root.addHandler(handler)
    root.setLevel(log_level.upper())

    return get_logger(application)


def get_logger(name: str) -> StructuredLogger:
    """Get a structured logger instance"""
    return StructuredLogger(name)
