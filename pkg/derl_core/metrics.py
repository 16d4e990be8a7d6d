"""Regression and discretized-sentiment metrics."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Dict

import numpy as np
from sklearn.metrics import accuracy_score, confusion_matrix, f1_score

logger = logging.getLogger("derl_core.metrics")

CLASSES_7 = np.arange(-3, 4)
SCALAR_METRICS = ("mae", "corr", "acc2_has0", "acc2_non0", "f1_has0", "f1_non0", "acc5", "acc7", "neutral_rate")


@dataclass
class MetricRecord:
    mae: float
    corr: float
    acc2_has0: float
    acc2_non0: float
    f1_has0: float
    f1_non0: float
    acc5: float
    acc7: float
    neutral_rate: float
    n: int
    n_non0: int
    corr_defined: bool = True
    confusion: np.ndarray = field(default_factory=lambda: np.zeros((7, 7), dtype=np.int64))

    def scalars(self) -> Dict[str, float]:
        return {name: float(getattr(self, name)) for name in SCALAR_METRICS}


def round_half_away(values: np.ndarray) -> np.ndarray:
    return np.sign(values) * np.floor(np.abs(values) + 0.5)


def discretize(values: np.ndarray, bound: int) -> np.ndarray:
    """Round half away from zero, then clamp to [-bound, bound]."""
    return np.clip(round_half_away(values), -bound, bound).astype(np.int64)


def pearson(pred: np.ndarray, truth: np.ndarray) -> tuple[float, bool]:
    """Two-pass Pearson coefficient; (0.0, False) when either side has zero variance."""
    dp = pred - pred.mean()
    dt = truth - truth.mean()
    sp = float(np.sqrt((dp * dp).sum()))
    st = float(np.sqrt((dt * dt).sum()))
    if sp == 0.0 or st == 0.0:
        return 0.0, False
    return float(np.clip((dp * dt).sum() / (sp * st), -1.0, 1.0)), True


def _binary(true: np.ndarray, pred: np.ndarray) -> tuple[float, float]:
    if true.size == 0:
        return 0.0, 0.0
    acc = float(accuracy_score(true, pred))
    f1 = float(f1_score(true, pred, pos_label=True, zero_division=0))
    return acc, f1


def compute_metrics(pred: np.ndarray, truth: np.ndarray) -> MetricRecord:
    pred = np.asarray(pred, dtype=np.float64).reshape(-1)
    truth = np.asarray(truth, dtype=np.float64).reshape(-1)
    if pred.shape != truth.shape or pred.size == 0:
        raise ValueError(f"need equal non-empty lengths, got {pred.shape} and {truth.shape}")

    corr, defined = pearson(pred, truth)
    if not defined:
        logger.warning("Pearson correlation undefined (zero variance); reporting 0")

    acc2_has0, f1_has0 = _binary(truth >= 0, pred >= 0)
    nonzero = truth != 0
    acc2_non0, f1_non0 = _binary(truth[nonzero] > 0, pred[nonzero] > 0)

    pred7, true7 = discretize(pred, 3), discretize(truth, 3)
    pred5, true5 = discretize(pred, 2), discretize(truth, 2)
    return MetricRecord(
        mae=float(np.mean(np.abs(pred - truth))),
        corr=corr,
        acc2_has0=acc2_has0,
        acc2_non0=acc2_non0,
        f1_has0=f1_has0,
        f1_non0=f1_non0,
        acc5=float(accuracy_score(true5, pred5)),
        acc7=float(accuracy_score(true7, pred7)),
        neutral_rate=float(np.mean(pred7 == 0)),
        n=int(pred.size),
        n_non0=int(nonzero.sum()),
        corr_defined=defined,
        confusion=confusion_matrix(true7, pred7, labels=CLASSES_7).astype(np.int64),
    )
