"""
Logging Utilities Module

Every ordcomp module logs through a logger obtained here, so that the
handler and the message format are configured in exactly one place.
"""

import logging
from typing import Optional

LOG_FORMAT = '[%(levelname)s] %(message)s'
ROOT_NAME = 'ordcomp'

# Level forced by set_verbosity, applied to loggers created later too
_forced_level: Optional[int] = None


def get_logger(name: str, level: int = logging.INFO) -> logging.Logger:
    """
    Get a module logger with the package handler attached

    Args:
        name: Logger name, normally the module's __name__
        level: Initial level (default: INFO)

    Returns:
        Configured logger
    """
    logger = logging.getLogger(name)
    if not getattr(logger, '_ordcomp_configured', False):
        # Configure logging
        logger.setLevel(_forced_level if _forced_level is not None else level)
        handler = logging.StreamHandler()
        formatter = logging.Formatter(LOG_FORMAT)
        handler.setFormatter(formatter)
        logger.addHandler(handler)
        logger.propagate = False
        logger._ordcomp_configured = True
    return logger


def set_verbosity(level: int) -> None:
    """Set the level of every ordcomp logger, present and future"""
    global _forced_level
    _forced_level = level
    for name, logger in logging.root.manager.loggerDict.items():
        if name == ROOT_NAME or name.startswith(ROOT_NAME + '.'):
            if isinstance(logger, logging.Logger):
                logger.setLevel(level)
