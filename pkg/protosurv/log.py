# protosurv/log.py

import logging
import os

import colorlog

LOG_LEVEL_ENV = "PROTOSURV_LOG_LEVEL"
LOG_FORMAT = "%(log_color)s%(asctime)s %(levelname)-8s%(reset)s %(name)s: %(message)s"


def setup_logging(level=None):
    """Attach one colored console handler to the protosurv logger"""
    level = (level or os.environ.get(LOG_LEVEL_ENV) or "INFO").upper()
    logger = logging.getLogger("protosurv")
    if not any(getattr(h, "_protosurv", False) for h in logger.handlers):
        handler = colorlog.StreamHandler()
        handler.setFormatter(colorlog.ColoredFormatter(
            LOG_FORMAT,
            datefmt="%H:%M:%S",
            log_colors={
                "DEBUG": "cyan",
                "INFO": "green",
                "WARNING": "yellow",
                "ERROR": "red",
                "CRITICAL": "red,bg_white",
            },
        ))
        handler._protosurv = True
        logger.addHandler(handler)
    try:
        logger.setLevel(level)
    except ValueError:
        logger.setLevel(logging.INFO)
        logger.warning("unknown log level %r, using INFO", level)
    return logger
