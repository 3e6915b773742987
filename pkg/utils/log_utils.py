"""Logging setup for the command-line entry point."""

from __future__ import annotations

import logging
import sys

LOG_FORMAT = "%(asctime)s %(levelname)-7s %(name)s: %(message)s"


def configure_logging(verbose: int = 0) -> logging.Logger:
    """
    Route the library loggers to stderr.

    Args:
        verbose: 0 = warnings only, 1 = info, 2+ = debug (per-iteration traces).

    Returns:
        The package logger.
    """
    if verbose >= 2:
        level = logging.DEBUG
    elif verbose == 1:
        level = logging.INFO
    else:
        level = logging.WARNING

    logger = logging.getLogger("hybrid_se")
    logger.setLevel(level)
    if not any(getattr(h, "_hybrid_se", False) for h in logger.handlers):
        handler = logging.StreamHandler(sys.stderr)
        handler.setFormatter(logging.Formatter(LOG_FORMAT))
        handler._hybrid_se = True  # type: ignore[attr-defined]
        logger.addHandler(handler)
    return logger
