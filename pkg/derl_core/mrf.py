"""Modality routing and fusion over the six disentangled expert features, plus the head."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence, Tuple

import numpy as np

from . import tensor as T
from .config import MODALITIES, ModelConfig
from .hed import DisentangledPair, learnable_temperature, temperature
from .nn import MLP, Module, TransformerStack
from .tensor import ConformanceError, Tensor

EXPERT_ORDER: Tuple[str, ...] = ("p_t", "p_v", "p_a", "s_t", "s_v", "s_a")
K_E = len(EXPERT_ORDER)


@dataclass
class ExpertSequence:
    """E_c = [H^p_t, H^p_v, H^p_a, H^s_t, H^s_v, H^s_a], each (B, N, D)."""

    experts: Tuple[Tensor, ...]

    def __post_init__(self) -> None:
        self.experts = tuple(self.experts)
        if len(self.experts) != K_E:
            raise ConformanceError(f"expert sequence needs exactly {K_E} entries, got {len(self.experts)}")
        shape = self.experts[0].shape
        for e in self.experts[1:]:
            if e.shape != shape:
                raise ConformanceError(f"expert shapes differ: {shape} vs {e.shape}")

    @classmethod
    def from_pairs(cls, pairs: Mapping[str, DisentangledPair]) -> "ExpertSequence":
        return cls(tuple(pairs[m].private for m in MODALITIES) + tuple(pairs[m].shared for m in MODALITIES))

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.experts[0].shape


@dataclass
class FusionWeights:
    """W^r: (B, N, 6) with columns in EXPERT_ORDER."""

    weights: Tensor
    tau: float

    def column(self, name: str) -> np.ndarray:
        return self.weights.data[..., EXPERT_ORDER.index(name)]

    def modality_mass(self, modality: str) -> np.ndarray:
        return self.column(f"p_{modality}") + self.column(f"s_{modality}")


@dataclass
class FusedRep:
    aggregated: Tensor
    fused: Tensor


def aggregate(experts: ExpertSequence, weights: Tensor | FusionWeights) -> Tensor:
    """H_e[token] = sum_j W^r[token, j] * E_j[token]."""
    w = weights.weights if isinstance(weights, FusionWeights) else T.as_tensor(weights)
    if w.shape[-1] != K_E or w.shape[:-1] != experts.shape[:-1]:
        raise ConformanceError(f"fusion weights {w.shape} do not match experts {experts.shape}")
    out = None
    for j, e in enumerate(experts.experts):
        term = T.mul(T.slice_axis(w, j, j + 1, axis=-1), e)
        out = term if out is None else T.add(out, term)
    return out


class FusionModule(Module):
    """Router G^r over per-token concatenated experts, fusion transformer, prediction head."""

    def __init__(self, config: ModelConfig, rng: np.random.Generator) -> None:
        d = config.d_model
        self.uniform = not config.use_mrf
        if not self.uniform:
            self.router = MLP(K_E * d, config.expert_width, K_E, rng)
            self.log_tau = learnable_temperature(1.0 / K_E)
        self.fusion = TransformerStack(d, config.fusion_depth, config.heads, rng)
        self.head = MLP(d, config.head_width, 1, rng)

    @property
    def tau(self) -> Tensor:
        return temperature(self.log_tau)

    def route_fusion(self, experts: ExpertSequence) -> FusionWeights:
        if self.uniform:
            shape = experts.shape[:-1] + (K_E,)
            return FusionWeights(T.Tensor(np.full(shape, 1.0 / K_E)), 1.0)
        tau = self.tau
        logits = self.router(T.concat(list(experts.experts), axis=-1))
        return FusionWeights(T.softmax(logits, tau, axis=-1), tau.item())

    def fuse_transform(self, aggregated: Tensor) -> Tensor:
        return self.fusion(aggregated)

    def predict(self, fused: Tensor) -> Tensor:
        """Mean-pool over tokens, then the head MLP; returns shape (B,)."""
        pooled = T.mean(fused, axis=-2)
        out = self.head(pooled)
        return T.reshape(out, out.shape[:-1])

    def __call__(self, experts: ExpertSequence) -> Tuple[Tensor, FusionWeights, FusedRep]:
        weights = self.route_fusion(experts)
        aggregated = aggregate(experts, weights)
        fused = self.fuse_transform(aggregated)
        return self.predict(fused), weights, FusedRep(aggregated, fused)
