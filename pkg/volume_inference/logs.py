"""
Logging setup.

The level comes from `VOLUME_INFERENCE_LOG_LEVEL`, which can be set in a `.env` file (see `.env.example`).
"""
import logging
import os

from dotenv import load_dotenv

load_dotenv()

LOG_LEVEL_ENV = "VOLUME_INFERENCE_LOG_LEVEL"
LOG_FORMAT = "%(asctime)s %(levelname)-7s %(name)s: %(message)s"


def configure_logging(level: str | None = None) -> int:
    """Configure the root logger once for command-line runs.

    Args:
        level: Explicit level name. Falls back to the environment, then INFO.

    Returns:
        The numeric level that was applied.
    """
    name = (level or os.getenv(LOG_LEVEL_ENV) or "INFO").upper()
    numeric = logging.getLevelName(name)
    if not isinstance(numeric, int):
        numeric = logging.INFO
    logging.basicConfig(level=numeric, format=LOG_FORMAT)
    logging.getLogger().setLevel(numeric)
    return numeric


def progress_disabled() -> bool:
    """Progress bars only show when INFO messages would."""
    return not logging.getLogger("volume_inference").isEnabledFor(logging.INFO)
