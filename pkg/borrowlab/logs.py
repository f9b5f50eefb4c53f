"""Console logging for borrowlab: one stderr handler, ``[LEVEL] message`` lines."""

import logging
import sys

LOG_FORMAT = "[%(levelname)s] %(message)s"


def setup_logging(verbosity: int = 0) -> None:
    """
    Install a stderr handler on the ``borrowlab`` logger.

    Args:
        verbosity: 0 -> INFO, >= 1 -> DEBUG, negative -> WARNING
    """
    if verbosity < 0:
        level = logging.WARNING
    elif verbosity == 0:
        level = logging.INFO
    else:
        level = logging.DEBUG

    logger = logging.getLogger("borrowlab")
    logger.setLevel(level)
    if not any(getattr(h, "_borrowlab", False) for h in logger.handlers):
        handler = logging.StreamHandler(sys.stderr)
        handler.setFormatter(logging.Formatter(LOG_FORMAT))
        handler._borrowlab = True  # type: ignore[attr-defined]
        logger.addHandler(handler)
