"""SVG figures: metric-vs-rate curves, confusion heatmaps and expert-sweep panels."""

from __future__ import annotations

import logging
from pathlib import Path
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
import pandas as pd  # noqa: E402
from matplotlib.ticker import FormatStrFormatter  # noqa: E402

logger = logging.getLogger("derl_core.plots")

CLASS_LABELS = [str(c) for c in range(-3, 4)]
_RC = {"svg.hashsalt": "derl", "svg.fonttype": "path", "path.simplify": False}


def _save(fig, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, format="svg", bbox_inches="tight", metadata={"Date": None})
    plt.close(fig)
    logger.debug("Wrote figure %s", path)
    return path


def rate_curve(report: pd.DataFrame, path: Path, metrics: Sequence[str] = ("mae", "f1_non0", "acc7")) -> Path:
    """One line per metric over the intra-modal rate grid; the average row is skipped."""
    rows = report[report["condition"].str.startswith("r=")]
    rates = rows["condition"].str.slice(2).astype(float).to_numpy()
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(5, 3.5))
        for metric in metrics:
            ax.plot(rates, rows[metric].to_numpy(), marker="o", linewidth=2, label=metric)
        ax.set_xlabel("missing rate r")
        ax.set_ylabel("metric")
        ax.set_xticks(rates)
        ax.yaxis.set_major_formatter(FormatStrFormatter("%.2f"))
        ax.legend(loc="best")
        return _save(fig, path)


def confusion_heatmap(matrix: np.ndarray, title: str, path: Path) -> Path:
    matrix = np.asarray(matrix)
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(4, 4))
        ax.imshow(matrix, cmap="Blues", interpolation="nearest")
        ax.set_xticks(range(7), CLASS_LABELS)
        ax.set_yticks(range(7), CLASS_LABELS)
        ax.set_xlabel("predicted class")
        ax.set_ylabel("true class")
        ax.set_title(title)
        peak = matrix.max() if matrix.size else 0
        for i in range(matrix.shape[0]):
            for j in range(matrix.shape[1]):
                color = "white" if peak and matrix[i, j] > peak / 2 else "black"
                ax.text(j, i, str(int(matrix[i, j])), ha="center", va="center", color=color, fontsize=7)
        return _save(fig, path)


def confusion_heatmaps(confusions: Mapping[str, np.ndarray], out_dir: Path, stem: str = "confusion") -> list[Path]:
    paths = []
    for key, matrix in confusions.items():
        safe = key.replace("=", "").replace("+", "_").replace(".", "p")
        paths.append(confusion_heatmap(matrix, key, out_dir / f"{stem}_{safe}.svg"))
    return paths


def expert_panels(sweep: pd.DataFrame, path: Path, metric: str = "mae") -> Path:
    """Two panels: metric vs k_private at fixed k_shared, and vs k_shared at fixed k_private."""
    ok = sweep[sweep["status"] == "ok"] if "status" in sweep else sweep
    with plt.rc_context(_RC):
        fig, axes = plt.subplots(1, 2, figsize=(8, 3.5), sharey=True)
        for ax, (panel, axis_key) in zip(axes, (("private", "k_private"), ("shared", "k_shared"))):
            rows = ok[ok["panel"] == panel].sort_values(axis_key)
            ax.plot(rows[axis_key].to_numpy(), rows[metric].to_numpy(), marker="s", linewidth=2)
            ax.set_xlabel(axis_key)
            ax.set_title(f"{panel} experts")
        axes[0].set_ylabel(metric)
        axes[0].yaxis.set_major_formatter(FormatStrFormatter("%.3f"))
        return _save(fig, path)


def rate_sweep_curve(sweep: pd.DataFrame, path: Path, metric: str = "mae") -> Path:
    ok = sweep[sweep["status"] == "ok"] if "status" in sweep else sweep
    rows = ok.sort_values("select_rate")
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(5, 3.5))
        ax.plot(rows["select_rate"].to_numpy(), rows[metric].to_numpy(), marker="o", linewidth=2)
        ax.set_xlabel("selection missing rate")
        ax.set_ylabel(f"intra average {metric}")
        return _save(fig, path)
