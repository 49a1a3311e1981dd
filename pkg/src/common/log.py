from __future__ import annotations

import logging
import os

_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


def configure_logging(level: str | None = None) -> None:
    """
    Install one stream handler on the root logger.

    Level resolution: explicit argument, then GGE_BOUNDS_LOG_LEVEL, then WARNING.
    """
    name = (level or os.getenv("GGE_BOUNDS_LOG_LEVEL", "WARNING")).strip().upper()
    logging.basicConfig(level=getattr(logging, name, logging.WARNING), format=_FORMAT, force=True)
