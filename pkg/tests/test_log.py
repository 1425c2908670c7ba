# tests/test_log.py

import logging

import pytest

from protosurv.log import LOG_LEVEL_ENV, setup_logging


@pytest.fixture
def protosurv_logger():
    logger = logging.getLogger("protosurv")
    handlers, level = list(logger.handlers), logger.level
    yield logger
    logger.handlers[:] = handlers
    logger.setLevel(level)


def test_setup_is_idempotent(protosurv_logger):
    setup_logging("info")
    setup_logging("info")
    ours = [h for h in protosurv_logger.handlers if getattr(h, "_protosurv", False)]
    assert len(ours) == 1


def test_level_from_argument_then_environment(protosurv_logger, monkeypatch):
    monkeypatch.setenv(LOG_LEVEL_ENV, "warning")
    assert setup_logging().level == logging.WARNING
    assert setup_logging("debug").level == logging.DEBUG
    monkeypatch.delenv(LOG_LEVEL_ENV)
    assert setup_logging().level == logging.INFO


def test_unknown_level_falls_back_to_info(protosurv_logger):
    assert setup_logging("chatty").level == logging.INFO
