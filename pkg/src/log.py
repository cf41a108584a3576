"""Line-delimited JSON logging on stderr."""

import json
import logging
import os
import sys

LOG_ENV_VAR = "MASKAUDIT_LOG"

_LEVELS = {
    "debug": logging.DEBUG,
    "info": logging.INFO,
    "warning": logging.WARNING,
    "error": logging.ERROR,
}


class JsonLineFormatter(logging.Formatter):
    """Render each record as a single JSON object.

    Structured fields are passed with ``extra={"fields": {...}}``.
    """

    def format(self, record: logging.LogRecord) -> str:
        payload = {
            "level": record.levelname.lower(),
            "logger": record.name,
            "event": record.getMessage(),
        }
        fields = getattr(record, "fields", None)
        if fields:
            payload.update(fields)
        if record.exc_info:
            payload["exception"] = self.formatException(record.exc_info)
        return json.dumps(payload, sort_keys=True, default=str)


def resolve_level(value: str | None) -> int:
    """Map a ``MASKAUDIT_LOG`` value to a logging level (default warning)."""
    if not value:
        return logging.WARNING
    return _LEVELS.get(value.strip().lower(), logging.WARNING)


def configure_logging(level: str | None = None) -> None:
    """Install the JSON stderr handler on the root logger."""
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(JsonLineFormatter())
    root = logging.getLogger()
    root.handlers[:] = [handler]
    root.setLevel(resolve_level(level if level is not None else os.environ.get(LOG_ENV_VAR)))
