"""Objective assembly and the augmented AdamW training loop with validation-based selection."""

from __future__ import annotations

import logging
import math
import time
from collections import deque
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Deque, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from tqdm.auto import tqdm

from . import tensor as T
from .config import MODALITIES, RunConfig, validate
from .data import (
    DataContractError,
    Dataset,
    MissingSpec,
    Split,
    corrupt_split,
    generate_synthetic,
    load_dataset,
    scaled_count,
)
from .evaluation import derive_seed, predict_split, write_csv
from .mlcr import ContractError
from .model import DerlModel, ForwardOutput
from .optim import AdamW, cosine_lr
from .tensor import Tensor

logger = logging.getLogger("derl_core.training")

HISTORY_COLUMNS: Tuple[str, ...] = ("epoch", "l_task", "l_dec", "l_rec", "l_total", "valid_mae", "lr")

# Seed streams derived from train.seed.
_INIT, _ORDER, _AUGMENT, _SELECT = 0, 1, 2, 3


class TrainingDivergedError(Exception):
    """Raised when the total loss stops being finite."""

    def __init__(self, step: int, last_finite: Sequence[float]) -> None:
        self.step = step
        self.last_finite = list(last_finite)
        shown = ", ".join(f"{v:.6g}" for v in self.last_finite) or "none"
        super().__init__(f"non-finite loss at step {step}; last finite losses: [{shown}]")


# ----------------------------- Objective -----------------------------

def task_loss(pred: Tensor, labels: np.ndarray | Tensor) -> Tensor:
    """Mean squared error over the batch."""
    target = labels.data if isinstance(labels, Tensor) else np.asarray(labels, dtype=np.float64)
    if pred.size == 0 or target.size == 0:
        raise ContractError("task loss needs a non-empty batch")
    if pred.shape != target.shape:
        raise ContractError(f"prediction shape {pred.shape} does not match label shape {target.shape}")
    return T.sq_l2_distance(pred, T.Tensor(target))


def total_loss(
    l_task: Tensor | float,
    l_dec: Optional[Tensor | float],
    l_rec: Optional[Tensor | float],
    weights: Sequence[float] = (1.0, 1.0, 1.0),
) -> Tensor:
    """w_task * L_task + w_dec * L_dec + w_rec * L_rec; missing terms count as zero."""
    total: Optional[Tensor] = None
    for term, w in zip((l_task, l_dec, l_rec), weights):
        if term is None:
            continue
        part = T.as_tensor(term)
        if w != 1.0:
            part = T.scale(part, float(w))
        total = part if total is None else T.add(total, part)
    return total if total is not None else T.Tensor(0.0)


def _value(term: Optional[Tensor]) -> float:
    return 0.0 if term is None else term.item()


# ----------------------------- History -----------------------------

@dataclass
class StepRecord:
    epoch: int
    step: int
    l_task: float
    l_dec: float
    l_rec: float
    l_total: float
    rec_levels: Dict[int, float] = field(default_factory=dict)


@dataclass
class EpochRecord:
    epoch: int
    l_task: float
    l_dec: float
    l_rec: float
    l_total: float
    valid_mae: float
    lr: float


@dataclass
class TrainingHistory:
    epochs: List[EpochRecord] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.epochs)

    def append(self, record: EpochRecord) -> None:
        self.epochs.append(record)

    def best_epoch(self) -> int:
        """First epoch with the lowest validation MAE."""
        if not self.epochs:
            raise ValueError("empty training history")
        best = self.epochs[0]
        for rec in self.epochs[1:]:
            if rec.valid_mae < best.valid_mae:
                best = rec
        return best.epoch

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([asdict(r) for r in self.epochs], columns=list(HISTORY_COLUMNS))

    def write_csv(self, path: Path) -> Path:
        path.parent.mkdir(parents=True, exist_ok=True)
        write_csv(self.to_frame(), path)
        return path

    @classmethod
    def read_csv(cls, path: Path) -> "TrainingHistory":
        frame = pd.read_csv(path, float_precision="round_trip")
        missing = [c for c in HISTORY_COLUMNS if c not in frame.columns]
        if missing:
            raise ValueError(f"{path}: history is missing column(s) {', '.join(missing)}")
        records = [
            EpochRecord(
                epoch=int(row.epoch), l_task=float(row.l_task), l_dec=float(row.l_dec),
                l_rec=float(row.l_rec), l_total=float(row.l_total),
                valid_mae=float(row.valid_mae), lr=float(row.lr),
            )
            for row in frame.itertuples(index=False)
        ]
        return cls(records)


@dataclass
class TrainResult:
    model: DerlModel
    history: TrainingHistory
    best_epoch: int
    best_valid_mae: float


# ----------------------------- Loop -----------------------------

def resolve_dataset(config: RunConfig) -> Dataset:
    """Load ``data.path`` when set, otherwise generate the synthetic dataset the config describes."""
    mc, dc = config.model, config.data
    if dc.path:
        dataset = load_dataset(dc.path)
        for m in MODALITIES:
            if dataset.dims[m] != mc.input_dim(m) or dataset.lengths[m] > mc.max_len(m):
                raise DataContractError(
                    f"{dc.path}: modality {m} has dim {dataset.dims[m]} and length {dataset.lengths[m]}, "
                    f"model expects dim {mc.input_dim(m)} and length <= {mc.max_len(m)}"
                )
        return dataset
    return generate_synthetic(
        dc.samples,
        lengths={m: mc.max_len(m) for m in MODALITIES},
        dims={m: mc.input_dim(m) for m in MODALITIES},
        redundancy=dc.redundancy,
        seed=dc.seed,
        noise=dc.noise,
        fractions=dc.split,
    )


def augment_split(split: Split, fraction: float, seed: int, text_vector: Optional[np.ndarray] = None) -> Split:
    """Corrupt a freshly drawn fraction of rows with per-modality rates from U[0, 1]."""
    count = scaled_count(fraction, len(split))
    if count == 0:
        return split
    rng = np.random.default_rng(seed)
    rows = np.sort(rng.choice(len(split), size=count, replace=False))
    return corrupt_split(split, MissingSpec.uniform_random(seed=derive_seed(seed, 1)), rows=rows, text_vector=text_vector)


def selection_split(valid: Split, rate: float, seed: int) -> Split:
    if rate == 0.0:
        return valid
    return corrupt_split(valid, MissingSpec.intra(rate, seed=derive_seed(seed, _SELECT)))


def validation_mae(model: DerlModel, split: Split, batch_size: int = 256) -> float:
    pred = predict_split(model, split, batch_size)
    return float(np.mean(np.abs(pred - split.labels)))


def train_step(
    model: DerlModel,
    corrupted: Split,
    complete: Split,
    weights: Sequence[float],
) -> Tuple[ForwardOutput, Tensor, Tensor]:
    out = model.forward(corrupted, complete if model.needs_complete_branch else None, train=True)
    l_task = task_loss(out.prediction, corrupted.labels)
    loss = total_loss(l_task, out.l_dec, out.l_rec, weights)
    return out, l_task, loss


def train(
    dataset: Dataset,
    config: RunConfig,
    on_step: Optional[Callable[[StepRecord], None]] = None,
    model: Optional[DerlModel] = None,
) -> TrainResult:
    """Train with per-epoch resampled missing augmentation; keep the best validation state."""
    validate(config)
    tc = config.train
    for name in ("train", "valid"):
        if name not in dataset.splits:
            raise ContractError(f"dataset has no '{name}' split")
    train_split, valid = dataset["train"], dataset["valid"]
    if len(train_split) == 0:
        raise ContractError("training split is empty")

    model = model if model is not None else DerlModel(config.model, seed=derive_seed(tc.seed, _INIT))
    optimizer = AdamW(model.parameters(), lr=tc.lr, weight_decay=tc.weight_decay)
    order_rng = np.random.default_rng(derive_seed(tc.seed, _ORDER))
    select = selection_split(valid, tc.select_rate, tc.seed)

    history = TrainingHistory()
    best_state: Optional[Dict[str, np.ndarray]] = None
    best_mae = math.inf
    best_epoch = -1
    last_finite: Deque[float] = deque(maxlen=5)
    step = 0

    logger.info(
        "Training %d epochs on %d samples (batch %d, lr %.3g, augment %.2f, seed %d)",
        tc.epochs, len(train_split), tc.batch_size, tc.lr, tc.augment_fraction, tc.seed,
    )
    for epoch in tqdm(range(tc.epochs), desc="epochs", disable=not tc.progress):
        started = time.perf_counter()
        optimizer.lr = cosine_lr(tc.lr, epoch, tc.epochs)
        corrupted = augment_split(train_split, tc.augment_fraction, derive_seed(tc.seed, _AUGMENT, epoch))
        order = order_rng.permutation(len(train_split))

        sums = np.zeros(4)
        batches = 0
        for start in range(0, len(order), tc.batch_size):
            idx = order[start:start + tc.batch_size]
            out, l_task, loss = train_step(model, corrupted.take(idx), train_split.take(idx), tc.loss_weights)
            values = (l_task.item(), _value(out.l_dec), _value(out.l_rec), loss.item())
            if not all(math.isfinite(v) for v in values):
                raise TrainingDivergedError(step, last_finite)
            last_finite.append(values[3])

            optimizer.zero_grad()
            loss.backward()
            optimizer.step()

            if on_step is not None:
                on_step(StepRecord(
                    epoch=epoch, step=step, l_task=values[0], l_dec=values[1], l_rec=values[2], l_total=values[3],
                    rec_levels={k: v.item() for k, v in out.rec_levels.items()},
                ))
            sums += values
            batches += 1
            step += 1

        means = sums / batches
        mae = validation_mae(model, select)
        history.append(EpochRecord(epoch, *map(float, means), valid_mae=mae, lr=optimizer.lr))
        if mae < best_mae:
            best_mae, best_epoch = mae, epoch
            best_state = model.state_dict()
        logger.info(
            "epoch %d/%d task=%.4f dec=%.4f rec=%.4f total=%.4f valid_mae=%.4f lr=%.3g (%.2fs)",
            epoch + 1, tc.epochs, *means, mae, optimizer.lr, time.perf_counter() - started,
        )

    if best_state is not None:
        model.load_state_dict(best_state)
    logger.info("Selected epoch %d (valid MAE %.4f at r=%.1f)", best_epoch, best_mae, tc.select_rate)
    return TrainResult(model=model, history=history, best_epoch=best_epoch, best_valid_mae=best_mae)
