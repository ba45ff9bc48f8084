"""Motion feature extraction supervised by action-unit detection.

The branch maps a flow sequence to a pooled motion feature and AU logits.
The default backbone is a small stack of spatial 3-d convolutions with a
global average pool over time and space: it localizes *where* motion happens
(the AU-aligned signal) and is invariant to the temporal ordering of the
frames, which is exactly the explicit-motion reading of the feature.  A tiny
transformer over the time-averaged flow is available as an alternative
backbone; both honor the same (feature, au_logits) contract, so backbones can
be swapped without touching the rest of the network.
"""

from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F

from .config import MotionConfig
from .errors import ShapeMismatch
from .sevit import TransformerBlock

AU_PROB_EPS = 1e-7


class SmallConv3d(nn.Module):
    """Spatial conv blocks on [B, 2, T, H, W], pooled to a feature vector."""

    def __init__(self, channels: list[int], out_dim: int):
        super().__init__()
        layers: list[nn.Module] = []
        prev = 2
        for ch in channels:
            layers.append(nn.Conv3d(prev, ch, kernel_size=(1, 3, 3), padding=(0, 1, 1)))
            layers.append(nn.ReLU(inplace=True))
            layers.append(nn.MaxPool3d(kernel_size=(1, 2, 2)))
            prev = ch
        self.features = nn.Sequential(*layers)
        self.fc = nn.Linear(prev, out_dim)

    def forward(self, flow: torch.Tensor) -> torch.Tensor:
        x = flow.permute(0, 2, 1, 3, 4)  # [B, 2, T-1, H, W]
        x = self.features(x)
        x = x.mean(dim=(2, 3, 4))  # global average over time and space
        return self.fc(x)


class SmallVit(nn.Module):
    """One transformer block over patches of the time-averaged flow field."""

    def __init__(self, height: int, width: int, out_dim: int, patch: int = 4, dim: int = 64, heads: int = 4):
        super().__init__()
        if height % patch != 0 or width % patch != 0:
            raise ShapeMismatch(f"patch {patch} does not divide {height}x{width}")
        self.patch = patch
        self.grid = (height // patch, width // patch)
        self.proj = nn.Linear(2 * patch * patch, dim)
        self.pos = nn.Parameter(torch.zeros(1, self.grid[0] * self.grid[1], dim))
        nn.init.trunc_normal_(self.pos, std=0.02)
        self.block = TransformerBlock(dim, heads)
        self.fc = nn.Linear(dim, out_dim)

    def forward(self, flow: torch.Tensor) -> torch.Tensor:
        x = flow.mean(dim=1)  # [B, 2, H, W]; collapse time
        b, c, h, w = x.shape
        p = self.patch
        hp, wp = self.grid
        x = x.reshape(b, c, hp, p, wp, p).permute(0, 2, 4, 1, 3, 5).reshape(b, hp * wp, c * p * p)
        x = self.proj(x) + self.pos
        x = self.block(x)
        return self.fc(x.mean(dim=1))


class MotionBranch(nn.Module):
    """Backbone plus AU detection head.

    forward: [B, T-1, 2, H, W] -> (motion feature [B, D], au logits [B, N_AU])
    """

    def __init__(self, cfg: MotionConfig, feature_dim: int, n_au: int, height: int, width: int):
        super().__init__()
        if cfg.kind == "small_conv3d":
            self.backbone: nn.Module = SmallConv3d(list(cfg.channels), feature_dim)
        elif cfg.kind == "small_vit":
            self.backbone = SmallVit(height, width, feature_dim)
        else:
            raise ShapeMismatch(f"unknown motion backbone kind {cfg.kind!r}")
        self.au_head = nn.Linear(feature_dim, n_au)

    def forward(self, flow: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        if flow.ndim != 5:
            raise ShapeMismatch(f"expected [B, T-1, 2, H, W], got {tuple(flow.shape)}")
        f_m = self.backbone(flow)
        return f_m, self.au_head(f_m)


def au_loss(logits: torch.Tensor, targets: torch.Tensor) -> torch.Tensor:
    """Sum of per-AU binary cross-entropies, averaged over the batch.

    Each AU is an independent binary sub-task; probabilities are clamped to
    [eps, 1-eps] before the log.
    """
    if logits.shape != targets.shape:
        raise ShapeMismatch(f"AU logits {tuple(logits.shape)} vs targets {tuple(targets.shape)}")
    probs = torch.sigmoid(logits).clamp(AU_PROB_EPS, 1.0 - AU_PROB_EPS)
    targets = targets.to(probs.dtype)
    bce = -(targets * probs.log() + (1.0 - targets) * (1.0 - probs).log())
    return bce.sum(dim=-1).mean()


def au_probabilities(logits: torch.Tensor) -> torch.Tensor:
    return torch.sigmoid(logits).clamp(AU_PROB_EPS, 1.0 - AU_PROB_EPS)
