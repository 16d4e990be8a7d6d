"""MCP resource handlers for configuration presets."""

from __future__ import annotations

import json
import logging

from ..config import PRESETS, preset

logger = logging.getLogger("derl_core.resources.templates")


async def resource_presets() -> str:
    """Names of the built-in presets with the values each one overrides."""
    return json.dumps(PRESETS, indent=2, sort_keys=True)


async def resource_preset(name: str) -> str:
    """Fully resolved INI text for one preset; a starting point for config_text."""
    logger.debug("Resource call: resource_preset(name=%s)", name)
    return preset(name).to_ini()
