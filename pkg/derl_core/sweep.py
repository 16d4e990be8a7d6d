"""Grid sweeps over expert counts, selection rate, or seeds, run in a process pool."""

from __future__ import annotations

import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Tuple

import numpy as np
import pandas as pd

from .config import RunConfig, load_run_config
from .evaluation import eval_intra, write_csv
from .metrics import SCALAR_METRICS
from .training import resolve_dataset, train

logger = logging.getLogger("derl_core.sweep")

AXES = ("experts", "rate", "seeds")
CELL_COLUMNS: Dict[str, Tuple[str, ...]] = {
    "experts": ("panel", "k_private", "k_shared"),
    "rate": ("select_rate",),
    "seeds": ("seed",),
}


class SweepError(Exception):
    """Invalid sweep request."""


@dataclass
class SweepCell:
    """One grid point: a fully resolved config as INI text plus its axis coordinates."""

    axis: str
    coords: Dict[str, Any]
    config_ini: str
    overrides: Tuple[str, ...] = field(default_factory=tuple)


def worker_count() -> int:
    raw = os.getenv("DERL_WORKERS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        logger.warning("Ignoring DERL_WORKERS=%r; using 1 worker", raw)
        return 1


def build_cells(config: RunConfig, axis: str) -> List[SweepCell]:
    if axis not in AXES:
        raise SweepError(f"unknown sweep axis '{axis}' (available: {', '.join(AXES)})")
    ini = config.to_ini()
    sc = config.sweep
    cells: List[SweepCell] = []
    if axis == "experts":
        for k in sc.expert_grid:
            cells.append(SweepCell(axis, {"panel": "private", "k_private": k, "k_shared": config.model.k_shared},
                                   ini, (f"model.k_private={k}",)))
        for k in sc.expert_grid:
            cells.append(SweepCell(axis, {"panel": "shared", "k_private": config.model.k_private, "k_shared": k},
                                   ini, (f"model.k_shared={k}",)))
    elif axis == "rate":
        for r in sc.rates:
            cells.append(SweepCell(axis, {"select_rate": r}, ini, (f"train.select_rate={r!r}",)))
    else:
        for s in sc.seeds:
            cells.append(SweepCell(axis, {"seed": s}, ini, (f"train.seed={s}",)))
    return cells


def run_cell(cell: SweepCell) -> Dict[str, Any]:
    """Train and score one cell; failures become a status string instead of an exception."""
    row: Dict[str, Any] = dict(cell.coords)
    try:
        config = load_run_config(text=cell.config_ini, overrides=cell.overrides)
        dataset = resolve_dataset(config)
        result = train(dataset, config)
        report = eval_intra(result.model, dataset["test"], config.eval.rates, config.eval.seed, config.eval.batch_size)
        row.update(report.average)
        row["best_epoch"] = result.best_epoch
        row["status"] = "ok"
    except Exception as exc:  # noqa: BLE001
        logger.error("Sweep cell %s failed: %s", cell.coords, exc)
        row.update({name: float("nan") for name in SCALAR_METRICS})
        row["best_epoch"] = -1
        row["status"] = f"failed: {type(exc).__name__}: {exc}"
    return row


def run_sweep(config: RunConfig, axis: str, workers: int | None = None) -> pd.DataFrame:
    cells = build_cells(config, axis)
    workers = workers or worker_count()
    logger.info("Sweeping %s over %d cells with %d worker(s)", axis, len(cells), workers)
    if workers == 1:
        rows = [run_cell(c) for c in cells]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(run_cell, cells))
    columns = list(CELL_COLUMNS[axis]) + list(SCALAR_METRICS) + ["best_epoch", "status"]
    return pd.DataFrame(rows, columns=columns)


def seed_summary(frame: pd.DataFrame) -> pd.DataFrame:
    """Mean and sample std per metric over successful seeds."""
    ok = frame[frame["status"] == "ok"]
    rows = []
    for name in SCALAR_METRICS:
        values = ok[name].to_numpy(dtype=np.float64)
        rows.append({
            "metric": name,
            "mean": float(values.mean()) if values.size else float("nan"),
            "std": float(values.std(ddof=1)) if values.size > 1 else 0.0,
            "n": int(values.size),
        })
    return pd.DataFrame(rows, columns=["metric", "mean", "std", "n"])


def write_sweep(frame: pd.DataFrame, axis: str, out_dir: Path) -> Dict[str, Path]:
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {"sweep": out_dir / f"sweep_{axis}.csv"}
    write_csv(frame, paths["sweep"])
    if axis == "seeds":
        paths["summary"] = out_dir / "sweep_seeds_summary.csv"
        write_csv(seed_summary(frame), paths["summary"])
    failed = int((frame["status"] != "ok").sum())
    if failed:
        logger.warning("%d of %d sweep cells failed; see the status column in %s", failed, len(frame), paths["sweep"])
    return paths
