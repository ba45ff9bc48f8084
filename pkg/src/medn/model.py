"""The full dual-branch network.

Flow goes through the motion branch (AU-supervised) and, unless disabled,
the multi-scale sparse-attention emotion branch.  The two features are
orthogonally decoupled and fused (collaborative fusion by default, a fixed
0.5/0.5 sum as the ablation fallback); a linear head classifies the fused
feature.  With the emotion branch disabled the head classifies the motion
feature directly.
"""

from __future__ import annotations

from typing import NamedTuple

import torch
import torch.nn as nn

from .cofm import CollaborativeFusion
from .config import ModelConfig
from .decouple import DecoupledPair, orthogonalize
from .motion_branch import MotionBranch
from .sevit import MultiScaleSevit


class ModelOutput(NamedTuple):
    logits: torch.Tensor  # [B, C]
    au_logits: torch.Tensor  # [B, N_AU]
    f_m: torch.Tensor  # [B, D]
    f_e: torch.Tensor | None
    pair: DecoupledPair | None
    f_fusion: torch.Tensor | None
    w_m: torch.Tensor | None  # [B]
    w_e: torch.Tensor | None  # [B]


class MEDN(nn.Module):
    def __init__(self, cfg: ModelConfig, num_classes: int, n_au: int, t: int, height: int, width: int):
        super().__init__()
        self.cfg = cfg
        d = cfg.feature_dim
        self.motion = MotionBranch(cfg.motion, d, n_au, height, width)
        if cfg.emotion_branch:
            self.sevit = MultiScaleSevit(cfg.sevit, t - 1, 2, height, width, d)
            self.cofm = CollaborativeFusion(d, cfg.cofm) if cfg.use_cofm else None
        else:
            self.sevit = None
            self.cofm = None
        self.classifier = nn.Linear(d, num_classes)
        self._zero_biases()

    def _zero_biases(self) -> None:
        # Weights keep torch's kaiming-uniform default; biases start at zero
        # so a zero input yields zero logits everywhere.
        for module in self.modules():
            if isinstance(module, (nn.Linear, nn.Conv3d)) and module.bias is not None:
                nn.init.zeros_(module.bias)

    def forward(self, flow: torch.Tensor) -> ModelOutput:
        f_m, au_logits = self.motion(flow)
        if self.sevit is None:
            return ModelOutput(self.classifier(f_m), au_logits, f_m, None, None, None, None, None)
        f_e = self.sevit(flow)
        pair = orthogonalize(f_m, f_e)
        if self.cofm is not None:
            fusion = self.cofm(pair.f_m_perp, pair.f_e_perp)
            f_fusion = fusion.f_fusion
            w_m, w_e = fusion.w_m, fusion.w_e
        else:
            f_fusion = 0.5 * pair.f_m_perp + 0.5 * pair.f_e_perp
            w_m = torch.full_like(pair.alpha, 0.5)
            w_e = torch.full_like(pair.alpha, 0.5)
        return ModelOutput(self.classifier(f_fusion), au_logits, f_m, f_e, pair, f_fusion, w_m, w_e)


def build_model(cfg: ModelConfig, num_classes: int, n_au: int, dims: dict, seed: int) -> MEDN:
    """Construct a model with reproducible initialization."""
    generator_state = torch.random.get_rng_state()
    torch.manual_seed(seed)
    try:
        model = MEDN(cfg, num_classes, n_au, dims["t"], dims["h"], dims["w"])
    finally:
        torch.random.set_rng_state(generator_state)
    return model
