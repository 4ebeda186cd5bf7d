"""Logging for the roadgraph CLI.

``setup_logging`` is called once from ``cli.main()`` and configures the
``"roadgraph"`` package logger; modules use ``logging.getLogger(__name__)``.
The console handler writes to stderr so JSON on stdout stays parseable. A log
file, when requested, always receives DEBUG records (per-tile and per-stage
detail) regardless of ``--verbose``.
"""

import logging
import sys
from pathlib import Path

PACKAGE_LOGGER = "roadgraph"

_FMT = "%(asctime)s  %(levelname)-7s [%(threadName)s] %(name)s: %(message)s"
_DATE = "%H:%M:%S"


def setup_logging(verbose: bool = False, log_file: Path | None = None) -> logging.Logger:
    """Configure and return the package logger.

    Args:
        verbose:  Console shows DEBUG instead of INFO.
        log_file: Optional file receiving every DEBUG record. Parent
                  directories are created.

    Safe to call repeatedly; previous handlers are closed and removed.
    """
    logger = logging.getLogger(PACKAGE_LOGGER)
    for handler in list(logger.handlers):
        logger.removeHandler(handler)
        handler.close()
    logger.propagate = False

    fmt = logging.Formatter(_FMT, datefmt=_DATE)
    console_level = logging.DEBUG if verbose else logging.INFO

    console = logging.StreamHandler(sys.stderr)
    console.setLevel(console_level)
    console.setFormatter(fmt)
    logger.addHandler(console)

    if log_file is not None:
        log_file.parent.mkdir(parents=True, exist_ok=True)
        fh = logging.FileHandler(log_file, encoding="utf-8")
        fh.setLevel(logging.DEBUG)
        fh.setFormatter(fmt)
        logger.addHandler(fh)

    # the logger gates before handlers do
    logger.setLevel(logging.DEBUG if log_file is not None else console_level)
    return logger
