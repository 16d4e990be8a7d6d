"""Command orchestration shared by the CLI and the MCP tools."""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional

import pandas as pd

from . import plots
from .config import ModelConfig, RunConfig, ablation_variant, validate
from .data import Dataset, load_dataset, planted_cosines, read_manifest, save_dataset
from .evaluation import (
    AVERAGE_KEY,
    EvalReport,
    all_subsets,
    eval_inter,
    eval_intra,
    rate_key,
    subset_key,
    write_csv,
)
from .metrics import SCALAR_METRICS
from .model import DerlModel
from .serialization import load_model, save_model
from .sweep import run_sweep, worker_count, write_sweep
from .training import StepRecord, TrainResult, resolve_dataset, train

logger = logging.getLogger("derl_core.engine")

MODEL_FILE = "model.bin"
HISTORY_FILE = "history.csv"
PROTOCOLS = ("intra", "inter", "ablation")


class DerlEngineError(Exception):
    """A command could not run: bad path, bad protocol, or unusable inputs."""


@dataclass
class DerlEngine:
    """Runs gen-data, train, eval, sweep and plot against an output root."""

    home: Path
    workers: int = 1

    @classmethod
    def from_env(cls) -> "DerlEngine":
        """Create an engine from environment variables loaded via dotenv.

        Optional env vars:
        - DERL_HOME (defaults to ./derl_runs)
        - DERL_WORKERS (sweep worker processes, defaults to 1)
        """
        home = Path(os.getenv("DERL_HOME", "derl_runs")).expanduser()
        return cls(home=home, workers=worker_count())

    # ----------------------------- helpers -----------------------------

    def resolve(self, out: Optional[str | Path]) -> Path:
        """Relative output paths land under ``home``."""
        if out is None:
            return self.home
        path = Path(out).expanduser()
        return path if path.is_absolute() else self.home / path

    def _prepare(self, out: Path, config: RunConfig) -> Path:
        try:
            out.mkdir(parents=True, exist_ok=True)
            config.write_snapshot(out)
        except OSError as exc:
            raise DerlEngineError(f"cannot write to output directory {out}: {exc}") from exc
        return out

    # ----------------------------- commands -----------------------------

    def gen_data(self, config: RunConfig, out: str | Path) -> Path:
        validate(config)
        out_dir = self._prepare(self.resolve(out), config)
        synthetic = config.copy()
        synthetic.data.path = ""
        dataset = resolve_dataset(synthetic)
        try:
            manifest = save_dataset(dataset, out_dir)
        except OSError as exc:
            raise DerlEngineError(f"cannot write dataset to {out_dir}: {exc}") from exc
        logger.info("Wrote dataset manifest %s", manifest)
        return manifest

    def load_data(self, config: RunConfig) -> Dataset:
        path = config.data.path
        if path and not Path(path).exists():
            raise DerlEngineError(f"dataset not found: {path}")
        return resolve_dataset(config)

    def train(
        self,
        config: RunConfig,
        out: str | Path,
        resume: Optional[str | Path] = None,
        on_step: Optional[Callable[[StepRecord], None]] = None,
    ) -> Dict[str, Any]:
        validate(config)
        out_dir = self._prepare(self.resolve(out), config)
        dataset = self.load_data(config)
        initial: Optional[DerlModel] = None
        if resume is not None:
            # ConfigMismatchError propagates: resuming into a different architecture is refused.
            initial, _ = load_model(self._existing(resume), expected=config.model)
        result = train(dataset, config, on_step=on_step, model=initial)
        return self._write_training(result, config, out_dir)

    def _write_training(self, result: TrainResult, config: RunConfig, out_dir: Path) -> Dict[str, Any]:
        metadata = {
            "best_epoch": result.best_epoch,
            "best_valid_mae": repr(result.best_valid_mae),
            "select_rate": config.train.select_rate,
            "seed": config.train.seed,
        }
        model_path = save_model(result.model, out_dir / MODEL_FILE, metadata)
        history_path = result.history.write_csv(out_dir / HISTORY_FILE)
        return {
            "model": str(model_path),
            "history": str(history_path),
            "best_epoch": result.best_epoch,
            "best_valid_mae": result.best_valid_mae,
            "epochs": len(result.history),
        }

    def _existing(self, path: str | Path) -> Path:
        resolved = Path(path).expanduser()
        if not resolved.exists():
            raise DerlEngineError(f"file not found: {resolved}")
        return resolved

    def load(self, model_path: str | Path, expected: Optional[ModelConfig] = None) -> DerlModel:
        model, _ = load_model(self._existing(model_path), expected=expected)
        return model

    def evaluate(
        self,
        config: RunConfig,
        protocol: str,
        out: str | Path,
        model_path: Optional[str | Path] = None,
        check_config: bool = False,
    ) -> Dict[str, Any]:
        """Run one protocol; intra and inter need ``model_path``, ablation retrains each variant."""
        if protocol not in PROTOCOLS:
            raise DerlEngineError(f"unknown protocol '{protocol}' (available: {', '.join(PROTOCOLS)})")
        validate(config)
        out_dir = self._prepare(self.resolve(out), config)
        dataset = self.load_data(config)
        if protocol == "ablation":
            return self._ablation(config, dataset, out_dir)
        if model_path is None:
            raise DerlEngineError(f"protocol '{protocol}' needs a model file (--model)")
        model = self.load(model_path, expected=config.model if check_config else None)
        if protocol == "intra":
            report = self._intra(model, dataset, config)
        else:
            report = eval_inter(model, dataset["test"], batch_size=config.eval.batch_size)
        paths = report.write(out_dir)
        paths.update(self._figures(report, config, out_dir))
        return {"protocol": protocol, "files": {k: str(v) for k, v in paths.items()}, "rows": report_rows(report)}

    def _intra(self, model: DerlModel, dataset: Dataset, config: RunConfig) -> EvalReport:
        ec = config.eval
        return eval_intra(model, dataset["test"], ec.rates, ec.seed, ec.batch_size)

    def _figures(self, report: EvalReport, config: RunConfig, out_dir: Path) -> Dict[str, Path]:
        paths: Dict[str, Path] = {}
        if report.protocol == "intra":
            paths["rate_curve"] = plots.rate_curve(report.to_frame(), out_dir / "intra_rate_curve.svg")
            wanted = {rate_key(r) for r in config.eval.confusion_rates}
            confusions = {c.key: c.metrics.confusion for c in report.conditions if c.key in wanted}
            for i, path in enumerate(plots.confusion_heatmaps(confusions, out_dir)):
                paths[f"confusion_{i}"] = path
        return paths

    def _ablation(self, config: RunConfig, dataset: Dataset, out_dir: Path) -> Dict[str, Any]:
        intra_rows: List[Dict[str, Any]] = []
        inter_rows: List[Dict[str, Any]] = []
        for name in config.eval.variants:
            variant = ablation_variant(config, name)
            logger.info("Ablation variant %s", name)
            result = train(dataset, variant)
            intra = self._intra(result.model, dataset, variant)
            inter = eval_inter(result.model, dataset["test"], batch_size=config.eval.batch_size)
            intra_rows.append({"variant": name, **intra.average})
            row: Dict[str, Any] = {"variant": name}
            for subset in all_subsets():
                row[subset_key(subset)] = inter[subset_key(subset)].f1_non0
            row[AVERAGE_KEY] = inter.average["f1_non0"]
            inter_rows.append(row)
        inter_columns = ["variant"] + [subset_key(s) for s in all_subsets()] + [AVERAGE_KEY]
        paths = {
            "ablation_intra": out_dir / "ablation_intra.csv",
            "ablation_inter": out_dir / "ablation_inter.csv",
        }
        write_csv(pd.DataFrame(intra_rows, columns=["variant", *SCALAR_METRICS]), paths["ablation_intra"])
        write_csv(pd.DataFrame(inter_rows, columns=inter_columns), paths["ablation_inter"])
        return {
            "protocol": "ablation",
            "files": {k: str(v) for k, v in paths.items()},
            "rows": intra_rows,
            "inter_rows": inter_rows,
        }

    def sweep(self, config: RunConfig, axis: str, out: str | Path) -> Dict[str, Any]:
        validate(config)
        out_dir = self._prepare(self.resolve(out), config)
        if config.data.path:
            self._existing(config.data.path)
        frame = run_sweep(config, axis, workers=self.workers)
        paths = write_sweep(frame, axis, out_dir)
        paths.update(self._sweep_figures(frame, axis, out_dir))
        return {"axis": axis, "files": {k: str(v) for k, v in paths.items()}, "cells": len(frame)}

    def _sweep_figures(self, frame: pd.DataFrame, axis: str, out_dir: Path) -> Dict[str, Path]:
        if (frame["status"] != "ok").all():
            return {}
        if axis == "experts":
            return {"panels": plots.expert_panels(frame, out_dir / "sweep_experts.svg")}
        if axis == "rate":
            return {"curve": plots.rate_sweep_curve(frame, out_dir / "sweep_rate.svg")}
        return {}

    def plot(self, source: str | Path, out: Optional[str | Path] = None) -> List[Path]:
        """Re-render every figure whose CSV is present in ``source``."""
        src = self._existing(self.resolve(source))
        out_dir = self.resolve(out) if out is not None else src
        out_dir.mkdir(parents=True, exist_ok=True)
        written: List[Path] = []
        report = src / "intra_report.csv"
        if report.exists():
            written.append(plots.rate_curve(pd.read_csv(report), out_dir / "intra_rate_curve.svg"))
        confusion = src / "intra_confusion.csv"
        if confusion.exists():
            frame = pd.read_csv(confusion)
            matrices = {
                key: group.sort_values("true")[[f"pred_{p}" for p in range(-3, 4)]].to_numpy()
                for key, group in frame.groupby("condition", sort=False)
            }
            written.extend(plots.confusion_heatmaps(matrices, out_dir))
        experts = src / "sweep_experts.csv"
        if experts.exists():
            written.append(plots.expert_panels(pd.read_csv(experts), out_dir / "sweep_experts.svg"))
        rate = src / "sweep_rate.csv"
        if rate.exists():
            written.append(plots.rate_sweep_curve(pd.read_csv(rate), out_dir / "sweep_rate.svg"))
        if not written:
            raise DerlEngineError(f"no report or sweep CSVs found in {src}")
        return written

    # ----------------------------- introspection -----------------------------

    def count_params(self, config: RunConfig) -> Dict[str, Any]:
        count = DerlModel(config.model).count_params()
        return {"total": count.total, "inference": count.inference, "by_module": count.by_module}

    def dataset_info(self, path: str | Path) -> Dict[str, Any]:
        manifest = read_manifest(self._existing(self.resolve(path)))
        return dict(manifest)

    def planted_cosines(self, path: str | Path) -> Dict[str, float]:
        """Pairwise cosines of the planted shared directions of a synthetic dataset."""
        return planted_cosines(load_dataset(self._existing(self.resolve(path))))


def report_rows(report: EvalReport) -> List[Dict[str, Any]]:
    return report.to_frame().to_dict(orient="records")
