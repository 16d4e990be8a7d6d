"""Workspace status and model-size tools."""

from __future__ import annotations

import logging
from typing import Any, Dict

from .. import __version__
from .. import tensor as T
from ..config import load_run_config
from ..engine import DerlEngine
from ..utils.logging import truncate

logger = logging.getLogger("derl_core.resources.status")


async def derl_status() -> Dict[str, Any]:
    """Report the run directory, sweep worker count, debug mode and package version."""
    logger.debug("Tool call: derl_status()")
    engine = DerlEngine.from_env()
    result = {
        "home": str(engine.home),
        "workers": engine.workers,
        "debug": T.debug_enabled(),
        "version": __version__,
    }
    logger.debug("Tool result: derl_status() -> %s", truncate(str(result)))
    return result


async def derl_count_params(preset: str = "toy", overrides: list[str] | None = None) -> Dict[str, Any]:
    """Count model parameters for a preset plus optional section.key=value overrides.

    Returns total, inference (excluding the training-only reconstruction networks)
    and a per-module breakdown (encoder, hed, mlcr, mrf).
    """
    logger.debug("Tool call: derl_count_params(preset=%s, overrides=%s)", preset, overrides)
    config = load_run_config(overrides=[f"run.preset={preset}", *(overrides or [])])
    engine = DerlEngine.from_env()
    result = {"preset": preset, **engine.count_params(config)}
    logger.debug("Tool result: derl_count_params -> %s", truncate(str(result)))
    return result
