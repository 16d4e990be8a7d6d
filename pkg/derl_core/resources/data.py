"""Synthetic dataset tools."""

from __future__ import annotations

import asyncio
import logging
from typing import Any, Dict

from ..config import load_run_config
from ..engine import DerlEngine
from ..utils.logging import truncate
from ..utils.projection import project_dict

logger = logging.getLogger("derl_core.resources.data")

MANIFEST_BASE_FIELDS = {"format", "provenance", "splits", "count_train", "count_valid", "count_test"}


async def derl_gen_data(
    preset: str = "toy",
    n: int | None = None,
    seed: int | None = None,
    redundancy: float | None = None,
    out: str = "data",
) -> Dict[str, Any]:
    """Generate a synthetic multimodal dataset under DERL_HOME.

    Parameters:
    - preset: toy, mosi or mosei (sets dims and sequence lengths)
    - n: number of samples (default from preset, 512 for toy)
    - seed: generator seed
    - redundancy: cosine between the planted shared directions, in [0, 1]
    - out: output directory, relative paths resolve under DERL_HOME
    """
    logger.debug(
        "Tool call: derl_gen_data(preset=%s, n=%s, seed=%s, redundancy=%s, out=%s)",
        preset, n, seed, redundancy, out,
    )
    overrides = [f"run.preset={preset}"]
    if n is not None:
        overrides.append(f"data.samples={n}")
    if seed is not None:
        overrides.append(f"data.seed={seed}")
    if redundancy is not None:
        overrides.append(f"data.redundancy={redundancy!r}")
    config = load_run_config(overrides=overrides)
    engine = DerlEngine.from_env()
    manifest = await asyncio.to_thread(engine.gen_data, config, out)
    result = {
        "manifest": str(manifest),
        "entries": engine.dataset_info(manifest),
        "planted_cosines": engine.planted_cosines(manifest),
    }
    logger.debug("Tool result: derl_gen_data -> %s", truncate(str(result)))
    return result


async def derl_dataset_info(path: str, fields: list[str] | None = None) -> Dict[str, Any]:
    """Summarize a dataset manifest.

    Default fields: format, provenance, splits, count_train, count_valid, count_test
    Optional fields: any manifest key (dim_t, len_v, meta_redundancy, file_train_t, ...), or ["*"] for all
    """
    logger.debug("Tool call: derl_dataset_info(path=%s, fields=%s)", path, fields)
    engine = DerlEngine.from_env()
    result = project_dict(engine.dataset_info(path), fields, MANIFEST_BASE_FIELDS)
    logger.debug("Tool result: derl_dataset_info -> %s", truncate(str(result)))
    return result
