"""Hybrid expert disentanglement: token-wise routing over private and shared experts."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, List, Mapping

import numpy as np

from . import tensor as T
from .config import MODALITIES, ModelConfig
from .encoder import UnifiedRep
from .nn import MLP, Linear, Module
from .tensor import ConformanceError, Tensor, parameter

TAU_MIN = 1e-3
TAU_MAX = 10.0


@dataclass
class RoutingWeights:
    """W^e_m: (B, N, k_p + k_s), row-stochastic over the last axis."""

    weights: Tensor
    k_private: int

    @property
    def k_total(self) -> int:
        return self.weights.shape[-1]

    def column(self, k: int) -> Tensor:
        return T.slice_axis(self.weights, k, k + 1, axis=-1)


@dataclass
class DisentangledPair:
    private: Tensor
    shared: Tensor
    branch: str
    modality: str

    def __post_init__(self) -> None:
        if self.private.shape != self.shared.shape:
            raise ConformanceError(
                f"private {self.private.shape} and shared {self.shared.shape} shapes differ"
            )

    def detach(self) -> "DisentangledPair":
        return DisentangledPair(self.private.detach(), self.shared.detach(), self.branch, self.modality)


def learnable_temperature(initial: float) -> Tensor:
    """tau = clip(exp(rho), TAU_MIN, TAU_MAX); rho is the stored parameter."""
    return parameter(np.array(math.log(initial)))


def temperature(log_tau: Tensor) -> Tensor:
    return T.clip(T.exp(log_tau), TAU_MIN, TAU_MAX)


class ExpertBank(Module):
    """k_p private experts per modality, k_s shared experts, one router per modality."""

    def __init__(self, config: ModelConfig, rng: np.random.Generator) -> None:
        d, h = config.d_model, config.expert_width
        self.k_private = config.k_private
        self.k_shared = config.k_shared
        self.shared: List[MLP] = [MLP(d, h, d, rng) for _ in range(config.k_shared)]
        self.private: Dict[str, List[MLP]] = {
            m: [MLP(d, h, d, rng) for _ in range(config.k_private)] for m in MODALITIES
        }
        self.routers: Dict[str, MLP] = {
            m: MLP(d, h, config.k_private + config.k_shared, rng) for m in MODALITIES
        }
        self.log_tau = learnable_temperature(1.0 / (config.k_private + config.k_shared))

    @property
    def tau(self) -> Tensor:
        return temperature(self.log_tau)

    def experts_for(self, modality: str) -> List[MLP]:
        return self.private[modality] + self.shared

    def route_experts(self, rep: UnifiedRep) -> RoutingWeights:
        logits = self.routers[rep.modality](rep.tokens)
        return RoutingWeights(T.softmax(logits, self.tau, axis=-1), self.k_private)

    def disentangle(self, rep: UnifiedRep, routing: RoutingWeights) -> DisentangledPair:
        experts = self.experts_for(rep.modality)
        if routing.k_total != len(experts):
            raise ConformanceError(f"routing has {routing.k_total} columns for {len(experts)} experts")
        outputs = [T.mul(routing.column(k), expert(rep.tokens)) for k, expert in enumerate(experts)]
        private = _sum(outputs[: self.k_private])
        shared = _sum(outputs[self.k_private:])
        return DisentangledPair(private, shared, rep.branch, rep.modality)

    def __call__(self, rep: UnifiedRep) -> DisentangledPair:
        return self.disentangle(rep, self.route_experts(rep))


class LinearDisentangler(Module):
    """Ablation stand-in: one linear map D -> 2D whose halves are private and shared."""

    def __init__(self, config: ModelConfig, rng: np.random.Generator) -> None:
        self.d_model = config.d_model
        self.maps: Dict[str, Linear] = {m: Linear(config.d_model, 2 * config.d_model, rng) for m in MODALITIES}

    def __call__(self, rep: UnifiedRep) -> DisentangledPair:
        both = self.maps[rep.modality](rep.tokens)
        d = self.d_model
        return DisentangledPair(
            T.slice_axis(both, 0, d, axis=-1),
            T.slice_axis(both, d, 2 * d, axis=-1),
            rep.branch,
            rep.modality,
        )


def _sum(parts: List[Tensor]) -> Tensor:
    out = parts[0]
    for part in parts[1:]:
        out = T.add(out, part)
    return out


def decoupling_loss(pairs: Mapping[str, DisentangledPair], mode: str = "abs") -> Tensor:
    """Sum over modalities of the token-mean cosine between private and shared parts.

    ``mode="abs"`` penalizes |cos| so the optimum is orthogonality; ``"raw"``
    keeps the signed cosine.
    """
    if mode not in ("abs", "raw"):
        raise ValueError(f"cosine mode must be abs or raw, got '{mode}'")
    terms = []
    for m in MODALITIES:
        pair = pairs[m]
        cos = T.cosine_similarity(pair.private, pair.shared)
        if mode == "abs":
            cos = T.absolute(cos)
        terms.append(T.mean(cos))
    return _sum(terms)
