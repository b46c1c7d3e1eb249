"""
Loguru sink configuration
"""

import sys
from typing import Optional

from loguru import logger

from config.settings import settings

LOG_FORMAT = "{time:YYYY-MM-DD HH:mm:ss.SSS} | {level: <8} | {name}:{function}:{line} - {message}"


def configure_logging(level: Optional[str] = None, log_file: Optional[str] = None) -> None:
    """
    Reset loguru sinks for the application

    Args:
        level: Minimum level for the stderr sink (defaults to settings)
        log_file: Optional path of a rotating file sink
    """
    level = (level or settings.LOG_LEVEL).upper()
    log_file = log_file or settings.LOG_FILE

    logger.remove()
    logger.add(sys.stderr, level=level, format=LOG_FORMAT)
    if log_file:
        logger.add(log_file, level="DEBUG", format=LOG_FORMAT, rotation="10 MB")
