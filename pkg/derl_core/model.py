"""The assembled DERL model: encoder, HED, MLCR and MRF with ablation switches."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Dict, Optional

import numpy as np

from . import tensor as T
from .config import MODALITIES, ModelConfig
from .data import Split
from .encoder import UnifiedEncoder, UnifiedRep
from .hed import DisentangledPair, ExpertBank, LinearDisentangler, RoutingWeights, decoupling_loss
from .mlcr import ContractError, ReconNets, combine_levels
from .mrf import ExpertSequence, FusedRep, FusionModule, FusionWeights
from .nn import Module
from .tensor import Tensor

logger = logging.getLogger("derl_core.model")


@dataclass
class ForwardOutput:
    prediction: Tensor
    l_dec: Optional[Tensor]
    l_rec: Optional[Tensor]
    rec_levels: Dict[int, Tensor]
    pairs: Dict[str, DisentangledPair]
    routing: Dict[str, RoutingWeights]
    fusion: FusionWeights
    fused: FusedRep
    unified: Dict[str, UnifiedRep] = field(default_factory=dict)


@dataclass
class ParamCount:
    total: int
    by_module: Dict[str, int]

    @property
    def inference(self) -> int:
        """Parameters used at inference (reconstruction nets are train-only)."""
        return self.total - self.by_module.get("mlcr", 0)


class DerlModel(Module):
    def __init__(self, config: ModelConfig, seed: int = 0) -> None:
        self.config = config
        rng = np.random.default_rng(seed)
        self.encoder = UnifiedEncoder(config, rng)
        self.hed = ExpertBank(config, rng) if config.use_hed else LinearDisentangler(config, rng)
        self.mlcr = ReconNets(config, rng, config.recon_levels) if config.recon_levels else None
        self.mrf = FusionModule(config, rng)

    @property
    def needs_complete_branch(self) -> bool:
        return bool(self.config.recon_levels)

    # -- stages -----------------------------------------------------------

    def encode(self, batch: Split, branch: str) -> Dict[str, UnifiedRep]:
        return {
            m: self.encoder(T.Tensor(batch.features[m]), m, branch, mask=batch.masks[m])
            for m in MODALITIES
        }

    def disentangle(self, reps: Dict[str, UnifiedRep]) -> tuple[Dict[str, DisentangledPair], Dict[str, RoutingWeights]]:
        pairs, routing = {}, {}
        for m, rep in reps.items():
            if isinstance(self.hed, ExpertBank):
                routing[m] = self.hed.route_experts(rep)
                pairs[m] = self.hed.disentangle(rep, routing[m])
            else:
                pairs[m] = self.hed(rep)
        return pairs, routing

    def forward(self, corrupted: Split, complete: Optional[Split] = None, train: bool = True) -> ForwardOutput:
        """Run both branches; the complete branch only supplies reconstruction targets."""
        reps = self.encode(corrupted, "corrupted")
        pairs, routing = self.disentangle(reps)
        prediction, fusion, fused = self.mrf(ExpertSequence.from_pairs(pairs))

        l_dec = None
        if isinstance(self.hed, ExpertBank) and train:
            l_dec = decoupling_loss(pairs, self.config.cosine_mode)

        rec_levels: Dict[int, Tensor] = {}
        if train and self.mlcr is not None:
            if complete is None:
                raise ContractError("training forward needs the complete branch for reconstruction targets")
            if self.config.detach_targets:
                with T.no_grad():
                    targets = self.encode(complete, "complete")
                    target_pairs, _ = self.disentangle(targets)
            else:
                targets = self.encode(complete, "complete")
                target_pairs, _ = self.disentangle(targets)
            rec_levels = self.mlcr.level_losses(
                {m: r.tokens for m, r in reps.items()},
                {m: r.tokens for m, r in targets.items()},
                pairs,
                target_pairs,
            )
        return ForwardOutput(
            prediction=prediction,
            l_dec=l_dec,
            l_rec=combine_levels(rec_levels),
            rec_levels=rec_levels,
            pairs=pairs,
            routing=routing,
            fusion=fusion,
            fused=fused,
            unified=reps,
        )

    def predict(self, batch: Split) -> np.ndarray:
        with T.no_grad():
            return self.forward(batch, train=False).prediction.data.copy()

    # -- bookkeeping ------------------------------------------------------

    def count_params(self) -> ParamCount:
        by_module = {
            "encoder": self.encoder.num_parameters(),
            "hed": self.hed.num_parameters(),
            "mlcr": self.mlcr.num_parameters() if self.mlcr is not None else 0,
            "mrf": self.mrf.num_parameters(),
        }
        return ParamCount(total=self.num_parameters(), by_module=by_module)
