"""
Logging Utilities
Provides tagged loggers for the simulator components.
"""

import logging
import os
import sys
from typing import Optional

ROOT_LOGGER = "issc"


class _TagFilter(logging.Filter):
    """Expose the component tag (logger name without the package prefix)."""

    def filter(self, record: logging.LogRecord) -> bool:
        record.tag = record.name.split(".", 1)[-1]
        return True


def configure_logging(level: Optional[str] = None) -> logging.Logger:
    """
    Attach the `[TAG] message` handler to the package logger.

    Args:
        level: Logging level name; falls back to ISSC_LOG_LEVEL, then INFO

    Returns:
        The package root logger
    """
    root = logging.getLogger(ROOT_LOGGER)
    level_name = (level or os.getenv("ISSC_LOG_LEVEL") or "INFO").upper()
    resolved = logging.getLevelName(level_name)
    if not isinstance(resolved, int):
        print(f"⚠️ Unknown log level '{level_name}', using INFO")
        resolved = logging.INFO
    root.setLevel(resolved)

    if not any(getattr(h, "_issc_handler", False) for h in root.handlers):
        handler = logging.StreamHandler(sys.stderr)
        handler.addFilter(_TagFilter())
        handler.setFormatter(logging.Formatter("[%(tag)s] %(message)s"))
        handler._issc_handler = True
        root.addHandler(handler)
        root.propagate = False
    return root


def get_logger(tag: str) -> logging.Logger:
    """Get the logger for a component tag such as 'CONIC SOLVER'."""
    return logging.getLogger(f"{ROOT_LOGGER}.{tag}")
