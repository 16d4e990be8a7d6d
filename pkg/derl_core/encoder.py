"""Per-modality projection and unified transformer encoding around shared bottleneck tokens."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Optional

import numpy as np

from . import tensor as T
from .config import MODALITIES, ModelConfig
from .nn import Linear, Module, TransformerStack
from .tensor import ConformanceError, Tensor, parameter

BRANCHES = ("corrupted", "complete")


@dataclass
class UnifiedRep:
    """Bottleneck-position outputs of one modality encoder, shape (B, N, D)."""

    tokens: Tensor
    branch: str
    modality: str

    def __post_init__(self) -> None:
        if self.branch not in BRANCHES:
            raise ValueError(f"unknown branch '{self.branch}'")

    def detach(self) -> "UnifiedRep":
        return UnifiedRep(self.tokens.detach(), self.branch, self.modality)


class BottleneckTokens(Module):
    """U_b: N x D learnable tokens shared by all three modality encoders."""

    def __init__(self, count: int, dim: int, rng: np.random.Generator) -> None:
        if count < 1:
            raise ConformanceError(f"bottleneck needs at least one token, got {count}")
        self.tokens = parameter(rng.normal(0.0, 0.02, size=(count, dim)))

    @property
    def count(self) -> int:
        return self.tokens.shape[0]


class ModalityEncoder(Module):
    def __init__(self, in_dim: int, max_len: int, config: ModelConfig, rng: np.random.Generator) -> None:
        self.projection = Linear(in_dim, config.d_model, rng)
        self.position = parameter(rng.normal(0.0, 0.02, size=(max_len, config.d_model)))
        self.transformer = TransformerStack(config.d_model, config.unified_depth, config.heads, rng)


class UnifiedEncoder(Module):
    """P_m followed by Unified-Transformer_m over [U_b; P_m(X_m)]."""

    def __init__(self, config: ModelConfig, rng: np.random.Generator) -> None:
        self.config = config
        self.bottleneck = BottleneckTokens(config.bottleneck, config.d_model, rng)
        self.encoders: Dict[str, ModalityEncoder] = {
            m: ModalityEncoder(config.input_dim(m), config.max_len(m), config, rng) for m in MODALITIES
        }
        self.unk_text = parameter(np.zeros(config.dim_t)) if config.learned_unk else None

    def project(self, x: Tensor, modality: str, mask: Optional[np.ndarray] = None) -> Tensor:
        """Affine map to D plus learned positions; input (B, T_m, D_m) or (T_m, D_m)."""
        enc = self.encoders[modality]
        squeeze = x.ndim == 2
        if squeeze:
            x = T.reshape(x, (1,) + x.shape)
            mask = None if mask is None else mask[None]
        if x.shape[-1] != self.config.input_dim(modality):
            raise ConformanceError(
                f"modality {modality}: expected feature dim {self.config.input_dim(modality)}, got shape {x.shape}"
            )
        length = x.shape[1]
        if length > enc.position.shape[0]:
            raise ConformanceError(
                f"modality {modality}: sequence length {length} exceeds configured {enc.position.shape[0]}"
            )
        if modality == "t" and self.unk_text is not None and mask is not None:
            keep = mask[..., None].astype(np.float64)
            x = T.add(T.mul(x, keep), T.mul(self.unk_text, 1.0 - keep))
        out = T.add(enc.projection(x), T.slice_axis(enc.position, 0, length, axis=0))
        return T.reshape(out, out.shape[1:]) if squeeze else out

    def encode_unified(self, projected: Tensor, modality: str, branch: str = "corrupted") -> UnifiedRep:
        """Prepend U_b, run the modality's stack, keep the first N positions."""
        enc = self.encoders[modality]
        squeeze = projected.ndim == 2
        if squeeze:
            projected = T.reshape(projected, (1,) + projected.shape)
        batch = projected.shape[0]
        n, d = self.bottleneck.tokens.shape
        if projected.shape[-1] != d:
            raise ConformanceError(f"encode_unified: projected shape {projected.shape} does not end in D={d}")
        ub = T.broadcast_to(self.bottleneck.tokens, (batch, n, d))
        hidden = enc.transformer(T.concat([ub, projected], axis=1))
        tokens = T.slice_axis(hidden, 0, n, axis=1)
        if squeeze:
            tokens = T.reshape(tokens, (n, d))
        return UnifiedRep(tokens, branch, modality)

    def __call__(
        self,
        x: np.ndarray | Tensor,
        modality: str,
        branch: str = "corrupted",
        mask: Optional[np.ndarray] = None,
    ) -> UnifiedRep:
        x = T.as_tensor(x)
        return self.encode_unified(self.project(x, modality, mask), modality, branch)
