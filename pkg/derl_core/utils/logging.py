"""Logging setup shared by the CLI and the MCP server."""

from __future__ import annotations

import os
import logging
from logging.handlers import RotatingFileHandler
from pathlib import Path
from typing import Optional

from dotenv import load_dotenv

LOG_FORMAT = "%(asctime)s %(name)s %(levelname)s: %(message)s"


def load_env() -> None:
    """Load .env from the working directory, falling back to the project root."""
    loaded = load_dotenv()
    if not loaded:
        project_root = Path(__file__).resolve().parent.parent.parent
        env_path = project_root / ".env"
        if env_path.exists():
            load_dotenv(env_path, override=False)


def setup_logging(level: Optional[str] = None) -> None:
    """Configure the root logger from DERL_LOG_LEVEL and DERL_LOG_FILE.

    An explicit ``level`` (the CLI's --log-level) wins over the environment.
    """
    load_env()

    log_level = (level or os.getenv("DERL_LOG_LEVEL", "INFO")).upper()
    logging.basicConfig(
        level=getattr(logging, log_level, logging.INFO),
        format=LOG_FORMAT,
    )

    log_file = os.getenv("DERL_LOG_FILE")
    if log_file:
        try:
            handler = RotatingFileHandler(log_file, maxBytes=5_000_000, backupCount=3)
            handler.setFormatter(logging.Formatter(LOG_FORMAT))
            logging.getLogger().addHandler(handler)
        except OSError as exc:
            logging.getLogger("derl_core").warning("Cannot open log file %s: %s", log_file, exc)


def truncate(text: str, max_len: int = 2000) -> str:
    """Truncate text to max_len with a suffix marker."""
    if text is None:
        return ""
    if len(text) <= max_len:
        return text
    return text[:max_len] + "... [truncated]"
