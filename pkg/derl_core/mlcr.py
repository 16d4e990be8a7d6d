"""Multi-level collaborative reconstruction against complete-branch targets."""

from __future__ import annotations

from typing import Dict, Optional, Sequence, Tuple, Union

import numpy as np

from . import tensor as T
from .config import MODALITIES, ModelConfig
from .hed import DisentangledPair
from .nn import MLP, Module
from .tensor import ConformanceError, Tensor

Scalar = Union[Tensor, float]


class ContractError(Exception):
    """A stage was called without the inputs its contract requires."""


def _require(target: Optional[Tensor], what: str) -> Tensor:
    if target is None:
        raise ContractError(f"{what}: complete-branch target is required at train time")
    return target


class ReconNets(Module):
    """R1 (input level), R2_p / R2_s (disentanglement level), R3 (joint level), per modality.

    R1 and R2 are residual MLPs with a zero-initialized output layer, so they
    start as the identity; R3 maps 2D -> D with no identity path.
    """

    def __init__(self, config: ModelConfig, rng: np.random.Generator, levels: Sequence[int] = (1, 2, 3)) -> None:
        d, h = config.d_model, config.recon_width
        self.d_model = d
        self.levels = tuple(sorted(set(levels)))
        if 1 in self.levels:
            self.input_level = {m: MLP(d, h, d, rng, residual=True, zero_last=True) for m in MODALITIES}
        if 2 in self.levels:
            self.private_level = {m: MLP(d, h, d, rng, residual=True, zero_last=True) for m in MODALITIES}
            self.shared_level = {m: MLP(d, h, d, rng, residual=True, zero_last=True) for m in MODALITIES}
        if 3 in self.levels:
            self.joint_level = {m: MLP(2 * d, h, d, rng) for m in MODALITIES}

    def recon_input(
        self, modality: str, u_hat: Tensor, target: Optional[Tensor]
    ) -> Tuple[Tensor, Tensor]:
        """U~_m = R1_m(U^_m) and its mean-absolute error to U_m."""
        target = _require(target, "recon_input")
        u_tilde = self.input_level[modality](u_hat)
        return u_tilde, T.l1_distance(u_tilde, target)

    def recon_disentangled(
        self, modality: str, pair_hat: DisentangledPair, target: Optional[DisentangledPair]
    ) -> Tuple[Tensor, Tensor, Tensor]:
        target = _require(target, "recon_disentangled")
        hp = self.private_level[modality](pair_hat.private)
        hs = self.shared_level[modality](pair_hat.shared)
        loss = T.add(T.l1_distance(hp, target.private), T.l1_distance(hs, target.shared))
        return hp, hs, loss

    def recon_joint(
        self, modality: str, pair_hat: DisentangledPair, target: Optional[Tensor]
    ) -> Tuple[Tensor, Tensor]:
        target = _require(target, "recon_joint")
        joint = T.concat([pair_hat.private, pair_hat.shared], axis=-1)
        return self.recon_joint_from(modality, joint, target)

    def recon_joint_from(self, modality: str, joint: Tensor, target: Tensor) -> Tuple[Tensor, Tensor]:
        if joint.shape[-1] != 2 * self.d_model:
            raise ConformanceError(
                f"recon_joint expects last axis 2D={2 * self.d_model}, got shape {joint.shape}"
            )
        u_bar = self.joint_level[modality](joint)
        return u_bar, T.l1_distance(u_bar, target)

    def level_losses(
        self,
        u_hat: Dict[str, Tensor],
        u_target: Dict[str, Tensor],
        pairs_hat: Dict[str, DisentangledPair],
        pairs_target: Dict[str, DisentangledPair],
    ) -> Dict[int, Tensor]:
        """L1_rec, L2_rec, L3_rec summed over modalities, for the enabled levels."""
        losses: Dict[int, Tensor] = {}
        for m in MODALITIES:
            if 1 in self.levels:
                losses[1] = _acc(losses.get(1), self.recon_input(m, u_hat[m], u_target[m])[1])
            if 2 in self.levels:
                losses[2] = _acc(losses.get(2), self.recon_disentangled(m, pairs_hat[m], pairs_target[m])[2])
            if 3 in self.levels:
                losses[3] = _acc(losses.get(3), self.recon_joint(m, pairs_hat[m], u_target[m])[1])
        return losses


def _acc(total: Optional[Tensor], term: Tensor) -> Tensor:
    return term if total is None else T.add(total, term)


def total_recon(l1: Scalar, l2: Scalar, l3: Scalar) -> Scalar:
    """L_rec = (L1 + L2 + L3) / 3."""
    if isinstance(l1, Tensor) or isinstance(l2, Tensor) or isinstance(l3, Tensor):
        return T.scale(T.add(T.add(l1, l2), l3), 1.0 / 3.0)
    return (l1 + l2 + l3) / 3.0


def combine_levels(losses: Dict[int, Tensor]) -> Optional[Tensor]:
    """Mean of the enabled levels; equals total_recon when all three are on."""
    if not losses:
        return None
    if set(losses) == {1, 2, 3}:
        return total_recon(losses[1], losses[2], losses[3])
    total = None
    for level in sorted(losses):
        total = _acc(total, losses[level])
    return T.scale(total, 1.0 / len(losses))
