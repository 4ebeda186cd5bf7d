"""Tests for roadgraph/log.py — logging setup."""

import logging

from roadgraph.log import setup_logging


# ---------------------------------------------------------------------------
# setup_logging  (logger state reset handled by conftest._reset_roadgraph_logger)
# ---------------------------------------------------------------------------


def test_setup_logging_adds_stderr_handler():
    """setup_logging attaches a StreamHandler (stderr) to the roadgraph logger."""
    setup_logging()
    logger = logging.getLogger("roadgraph")
    stream_handlers = [h for h in logger.handlers if type(h) is logging.StreamHandler]
    assert len(stream_handlers) == 1


def test_setup_logging_default_level_is_info():
    """Without verbose=True the roadgraph logger is set to INFO."""
    setup_logging()
    assert logging.getLogger("roadgraph").level == logging.INFO


def test_setup_logging_verbose_sets_debug_level():
    """verbose=True lowers the level to DEBUG."""
    setup_logging(verbose=True)
    assert logging.getLogger("roadgraph").level == logging.DEBUG


def test_setup_logging_file_handler_created(tmp_path):
    """Passing log_file attaches a FileHandler and creates the file."""
    log_file = tmp_path / "logs" / "run.log"
    setup_logging(log_file=log_file)
    logger = logging.getLogger("roadgraph")
    file_handlers = [h for h in logger.handlers if isinstance(h, logging.FileHandler)]
    assert len(file_handlers) == 1
    assert log_file.exists()


def test_setup_logging_is_idempotent():
    """Calling setup_logging twice leaves exactly one StreamHandler."""
    setup_logging()
    setup_logging()
    logger = logging.getLogger("roadgraph")
    stream_handlers = [h for h in logger.handlers if type(h) is logging.StreamHandler]
    assert len(stream_handlers) == 1


def test_setup_logging_does_not_propagate():
    """The package logger stops propagation so records are not printed twice."""
    setup_logging()
    assert logging.getLogger("roadgraph").propagate is False


def test_child_logger_records_reach_file(tmp_path):
    """Module loggers (roadgraph.*) write through the package handlers."""
    log_file = tmp_path / "run.log"
    setup_logging(log_file=log_file)
    logging.getLogger("roadgraph.tiling").info("planned 4 tiles")
    for h in logging.getLogger("roadgraph").handlers:
        h.flush()
    text = log_file.read_text()
    assert "planned 4 tiles" in text
    assert "INFO" in text


def test_log_file_records_debug_without_verbose(tmp_path):
    """The file captures DEBUG detail while the console stays at INFO."""
    log_file = tmp_path / "run.log"
    logger = setup_logging(log_file=log_file)
    console = next(h for h in logger.handlers if type(h) is logging.StreamHandler)
    assert console.level == logging.INFO
    logging.getLogger("roadgraph.graph").debug("pruned 3 spurs")
    for h in logger.handlers:
        h.flush()
    assert "roadgraph.graph: pruned 3 spurs" in log_file.read_text()


def test_repeated_setup_closes_old_file_handler(tmp_path):
    """Reconfiguring closes the previous FileHandler instead of leaking it."""
    first = setup_logging(log_file=tmp_path / "a.log")
    old = next(h for h in first.handlers if isinstance(h, logging.FileHandler))
    setup_logging()
    assert old.stream is None
    assert not any(isinstance(h, logging.FileHandler) for h in first.handlers)
