"""Tests for logger setup."""
import logging
from pathlib import Path

from latxgen.utils.logger import close_file_handlers, setup_logger


def test_console_handler_is_added_once() -> None:
    logger = setup_logger("latxgen.test.console")
    setup_logger("latxgen.test.console")
    consoles = [h for h in logger.handlers if not isinstance(h, logging.FileHandler)]
    assert len(consoles) == 1


def test_file_handler_writes_and_closes(tmp_path: Path) -> None:
    log_file = tmp_path / "logs" / "run.log"
    logger = setup_logger("latxgen.test.file", level=logging.DEBUG, log_file=log_file)
    setup_logger("latxgen.test.file", level=logging.DEBUG, log_file=log_file)
    assert sum(isinstance(h, logging.FileHandler) for h in logger.handlers) == 1
    logger.debug("curve stage started")
    close_file_handlers(logger)
    assert not any(isinstance(h, logging.FileHandler) for h in logger.handlers)
    line = log_file.read_text().strip()
    assert line.endswith("latxgen.test.file - DEBUG - curve stage started")
