"""Central finite-difference oracle for analytic gradients."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Dict, Iterable, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from .tensor import Tensor, TensorError, debug_mode

logger = logging.getLogger("derl_core.gradcheck")

ParamSet = Union[Sequence[Tensor], Mapping[str, Tensor]]


@dataclass
class GradCheckEntry:
    param: str
    index: Tuple[int, ...]
    analytic: float
    numeric: float
    rel_error: float


def relative_error(analytic: float, numeric: float) -> float:
    denom = max(abs(analytic), abs(numeric), 1e-8)
    return abs(analytic - numeric) / denom


def _named(params: ParamSet) -> Dict[str, Tensor]:
    if isinstance(params, Mapping):
        return dict(params)
    return {(p.name or f"param{i}"): p for i, p in enumerate(params)}


def _indices(
    tensor: Tensor,
    entries: Optional[int],
    rng: np.random.Generator,
) -> Iterable[Tuple[int, ...]]:
    if entries is None or entries >= tensor.size:
        return [tuple(int(i) for i in idx) for idx in np.ndindex(*tensor.shape)]
    flat = rng.choice(tensor.size, size=entries, replace=False)
    return [tuple(int(i) for i in np.unravel_index(f, tensor.shape)) for f in sorted(flat)]


def grad_check_entries(
    f: Callable[[], Tensor],
    params: ParamSet,
    step: float = 1e-5,
    entries_per_param: Optional[int] = None,
    seed: int = 0,
) -> list[GradCheckEntry]:
    """Compare backprop gradients with central differences, entry by entry.

    ``f`` must rebuild its graph on every call and be deterministic.
    """
    if not step > 0:
        raise ValueError(f"step must be > 0, got {step}")
    named = _named(params)
    rng = np.random.default_rng(seed)

    with debug_mode(True):
        for p in named.values():
            p.zero_grad()
        loss = f()
        if loss.size != 1:
            raise TensorError(f"grad_check needs a scalar function, got shape {loss.shape}")
        loss.backward()
        analytic = {name: p.grad.copy() for name, p in named.items()}

        results: list[GradCheckEntry] = []
        for name, p in named.items():
            for idx in _indices(p, entries_per_param, rng):
                original = p.data[idx]
                p.data[idx] = original + step
                plus = f().item()
                p.data[idx] = original - step
                minus = f().item()
                p.data[idx] = original
                numeric = (plus - minus) / (2.0 * step)
                a = float(analytic[name][idx])
                results.append(GradCheckEntry(name, idx, a, numeric, relative_error(a, numeric)))
    return results


def grad_check(
    f: Callable[[], Tensor],
    params: ParamSet,
    step: float = 1e-5,
    entries_per_param: Optional[int] = None,
    seed: int = 0,
) -> float:
    """Max relative error between analytic and central-difference gradients."""
    results = grad_check_entries(f, params, step, entries_per_param, seed)
    if not results:
        return 0.0
    worst = max(results, key=lambda r: r.rel_error)
    logger.debug(
        "grad_check: %d entries, worst %s%s analytic=%.6g numeric=%.6g rel=%.3g",
        len(results), worst.param, worst.index, worst.analytic, worst.numeric, worst.rel_error,
    )
    return worst.rel_error
