import logging
from typing import Optional

from prosodid.core.config import settings

LOG_FORMAT = "[%(asctime)s: %(levelname)s/%(processName)s] %(name)s: %(message)s"


def setup_logging(level: Optional[str] = None) -> None:
    """Install a single stream handler on the package logger."""
    logger = logging.getLogger("prosodid")
    logger.setLevel((level or settings.LOG_LEVEL).upper())
    if not any(getattr(h, "_prosodid", False) for h in logger.handlers):
        handler = logging.StreamHandler()
        handler.setFormatter(logging.Formatter(LOG_FORMAT))
        handler._prosodid = True
        logger.addHandler(handler)
