"""Missing-modality evaluation protocols and report serialization."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from itertools import combinations
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from . import tensor as T
from .config import MODALITIES
from .data import MissingSpec, Split, corrupt_split
from .metrics import SCALAR_METRICS, MetricRecord, compute_metrics

logger = logging.getLogger("derl_core.evaluation")

INTRA_RATES: Tuple[float, ...] = tuple(round(0.1 * i, 1) for i in range(10))
REPORT_COLUMNS: Tuple[str, ...] = ("condition",) + SCALAR_METRICS + ("n",)
AVERAGE_KEY = "avg"


def derive_seed(seed: int, *keys: int) -> int:
    return int(np.random.SeedSequence([int(seed), *[int(k) for k in keys]]).generate_state(1)[0])


def subset_key(subset: Sequence[str]) -> str:
    return "+".join(m for m in MODALITIES if m in subset)


def all_subsets() -> List[Tuple[str, ...]]:
    """The 7 non-empty subsets of {t, v, a}: singles, pairs, then the complete set."""
    out: List[Tuple[str, ...]] = []
    for size in (1, 2, 3):
        out.extend(combinations(MODALITIES, size))
    return out


def rate_key(rate: float) -> str:
    return f"r={rate:.1f}"


@dataclass
class ConditionResult:
    key: str
    metrics: MetricRecord


@dataclass
class EvalReport:
    protocol: str
    conditions: List[ConditionResult] = field(default_factory=list)
    average: Dict[str, float] = field(default_factory=dict)
    average_over: Tuple[str, ...] = ()

    def __getitem__(self, key: str) -> MetricRecord:
        for c in self.conditions:
            if c.key == key:
                return c.metrics
        raise KeyError(key)

    def keys(self) -> List[str]:
        return [c.key for c in self.conditions]

    def to_frame(self) -> pd.DataFrame:
        rows = []
        for c in self.conditions:
            rows.append({"condition": c.key, **c.metrics.scalars(), "n": c.metrics.n})
        rows.append({"condition": AVERAGE_KEY, **self.average, "n": 0})
        return pd.DataFrame(rows, columns=list(REPORT_COLUMNS))

    def confusion_frame(self) -> pd.DataFrame:
        rows = []
        for c in self.conditions:
            for i, true_class in enumerate(range(-3, 4)):
                row = {"condition": c.key, "true": true_class}
                row.update({f"pred_{p}": int(c.metrics.confusion[i, j]) for j, p in enumerate(range(-3, 4))})
                rows.append(row)
        return pd.DataFrame(rows)

    def write(self, out_dir: Path, stem: Optional[str] = None) -> Dict[str, Path]:
        out_dir.mkdir(parents=True, exist_ok=True)
        stem = stem or self.protocol
        paths = {
            "report": out_dir / f"{stem}_report.csv",
            "confusion": out_dir / f"{stem}_confusion.csv",
            "summary": out_dir / f"{stem}_summary.txt",
        }
        write_csv(self.to_frame(), paths["report"])
        write_csv(self.confusion_frame(), paths["confusion"])
        lines = [f"protocol: {self.protocol}", f"conditions: {','.join(self.keys())}",
                 f"average_over: {','.join(self.average_over)}"]
        lines += [f"avg_{k}: {v!r}" for k, v in self.average.items()]
        paths["summary"].write_text("\n".join(lines) + "\n", encoding="utf-8")
        return paths


def write_csv(frame: pd.DataFrame, path: Path) -> None:
    frame.to_csv(path, index=False, float_format="%.17g", lineterminator="\n")


def average_metrics(records: Sequence[MetricRecord]) -> Dict[str, float]:
    return {name: float(np.mean([getattr(r, name) for r in records])) for name in SCALAR_METRICS}


def predict_split(model, split: Split, batch_size: int = 256) -> np.ndarray:
    parts = [model.predict(batch) for batch in split.batches(batch_size)]
    return np.concatenate(parts) if parts else np.zeros(0)


def evaluate_clean(model, split: Split, batch_size: int = 256) -> MetricRecord:
    return compute_metrics(predict_split(model, split, batch_size), split.labels)


def eval_intra(
    model,
    split: Split,
    rates: Sequence[float] = INTRA_RATES,
    seed: int = 1234,
    batch_size: int = 256,
) -> EvalReport:
    """Corrupt the split at each rate with a mask fixed per (seed, rate), then score."""
    report = EvalReport(protocol="intra")
    for rate in rates:
        if rate >= 1.0:
            logger.warning("Skipping intra rate %.1f: complete masking is excluded", rate)
            continue
        spec = MissingSpec.intra(rate, seed=derive_seed(seed, int(round(rate * 1000))))
        corrupted = split if rate == 0.0 else corrupt_split(split, spec)
        metrics = compute_metrics(predict_split(model, corrupted, batch_size), split.labels)
        report.conditions.append(ConditionResult(rate_key(rate), metrics))
        logger.info("intra %s mae=%.4f f1=%.4f acc7=%.4f", rate_key(rate), metrics.mae, metrics.f1_non0, metrics.acc7)
    report.average = average_metrics([c.metrics for c in report.conditions])
    report.average_over = tuple(report.keys())
    return report


def eval_inter(
    model,
    split: Split,
    subsets: Optional[Sequence[Sequence[str]]] = None,
    batch_size: int = 256,
) -> EvalReport:
    """Remove whole modalities per availability subset; average excludes the complete set."""
    report = EvalReport(protocol="inter")
    complete = subset_key(MODALITIES)
    for subset in subsets or all_subsets():
        key = subset_key(subset)
        corrupted = split if key == complete else corrupt_split(split, MissingSpec.inter(subset))
        metrics = compute_metrics(predict_split(model, corrupted, batch_size), split.labels)
        report.conditions.append(ConditionResult(key, metrics))
        logger.info("inter {%s} f1=%.4f mae=%.4f", key, metrics.f1_non0, metrics.mae)
    partial = [c for c in report.conditions if c.key != complete]
    report.average = average_metrics([c.metrics for c in partial])
    report.average_over = tuple(c.key for c in partial)
    return report


def routed_text_mass(model, split: Split, available: Sequence[str] = ("t",), batch_size: int = 256) -> float:
    """Mean fusion-router mass on text experts (private + shared) under inter-modal removal."""
    corrupted = corrupt_split(split, MissingSpec.inter(available))
    masses = []
    with T.no_grad():
        for batch in corrupted.batches(batch_size):
            out = model.forward(batch, train=False)
            masses.append(out.fusion.modality_mass("t").mean(axis=-1))
    return float(np.mean(np.concatenate(masses)))
