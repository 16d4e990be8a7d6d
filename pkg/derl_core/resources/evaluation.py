"""Evaluation protocol tool."""

from __future__ import annotations

import asyncio
import logging
from typing import Any, Dict

from ..config import load_run_config
from ..engine import DerlEngine
from ..utils.logging import truncate
from ..utils.projection import project_rows

logger = logging.getLogger("derl_core.resources.evaluation")


async def derl_evaluate(
    model_path: str,
    protocol: str = "intra",
    config_text: str | None = None,
    overrides: list[str] | None = None,
    out: str = "eval",
    fields: list[str] | None = None,
) -> Dict[str, Any]:
    """Evaluate a saved model under a missing-modality protocol.

    Parameters:
    - model_path: model.bin written by training
    - protocol: intra (token masking at r = 0.0 .. 0.9) or inter (all 7 modality subsets)
    - config_text / overrides: dataset and eval settings (data.path, eval.seed, eval.rates, ...)
    - out: directory for the report CSVs and SVG figures
    - fields: metric columns beyond the defaults, or ["*"] for all

    Default fields: condition, mae, f1_non0
    Optional fields: corr, acc2_has0, acc2_non0, f1_has0, acc5, acc7, neutral_rate, n
    """
    logger.debug(
        "Tool call: derl_evaluate(model_path=%s, protocol=%s, overrides=%s, out=%s, fields=%s)",
        model_path, protocol, overrides, out, fields,
    )
    if protocol not in ("intra", "inter"):
        return {"error": f"protocol must be intra or inter, got '{protocol}'"}
    config = load_run_config(text=config_text, overrides=list(overrides or []))
    engine = DerlEngine.from_env()
    report = await asyncio.to_thread(engine.evaluate, config, protocol, out, model_path)
    result = {
        "protocol": report["protocol"],
        "files": report["files"],
        "rows": project_rows(report["rows"], fields),
    }
    logger.debug("Tool result: derl_evaluate -> %s", truncate(str(result)))
    return result
