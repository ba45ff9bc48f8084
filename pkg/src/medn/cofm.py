"""Collaborative fusion of the orthogonalized motion and emotion features.

Three stages: (1) the two features form a 2-token sequence and attend to each
other through shared Q/K/V maps, (2) each branch re-enhances itself with
cross-attention from its collaborative counterpart (a residual keeps the
original feature in the path, since single-token attention weights are
identically 1), (3) small gate networks produce per-sample scalars that are
normalized to a convex combination of the two enhanced features.
"""

from __future__ import annotations

from typing import NamedTuple

import torch
import torch.nn as nn

from .config import CofmConfig
from .errors import ShapeMismatch


class FusionOutput(NamedTuple):
    f_col_m: torch.Tensor  # [B, D]
    f_col_e: torch.Tensor  # [B, D]
    f_prime_m: torch.Tensor  # [B, D]
    f_prime_e: torch.Tensor  # [B, D]
    w_m: torch.Tensor  # [B]
    w_e: torch.Tensor  # [B]
    f_fusion: torch.Tensor  # [B, D]


class CrossEnhance(nn.Module):
    """Multi-head cross-attention of one query token over one key/value token.

    With a single key/value token every per-head softmax weight is exactly 1
    regardless of the query, so attention reduces to the value path; the
    residual keeps the original feature in the output.
    """

    def __init__(self, dim: int, heads: int):
        super().__init__()
        if dim % heads != 0:
            raise ShapeMismatch(f"dim {dim} not divisible by {heads} heads")
        self.heads = heads
        self.scale = (dim // heads) ** -0.5
        self.q = nn.Linear(dim, dim)
        self.k = nn.Linear(dim, dim)
        self.v = nn.Linear(dim, dim)
        self.proj = nn.Linear(dim, dim)

    def forward(self, query: torch.Tensor, context: torch.Tensor) -> torch.Tensor:
        b, d = query.shape
        hd = d // self.heads
        q = self.q(query).reshape(b, self.heads, 1, hd)
        k = self.k(context).reshape(b, self.heads, 1, hd)
        v = self.v(context).reshape(b, self.heads, 1, hd)
        attn = ((q @ k.transpose(-2, -1)) * self.scale).softmax(dim=-1)  # [B, h, 1, 1], all ones
        attended = (attn @ v).reshape(b, d)
        return query + self.proj(attended)


class GateNet(nn.Module):
    """sigmoid(W1(GELU(W2 x))) -> scalar in (0, 1) per sample."""

    def __init__(self, dim: int, hidden_ratio: int):
        super().__init__()
        hidden = max(1, dim // hidden_ratio)
        self.net = nn.Sequential(nn.Linear(dim, hidden), nn.GELU(), nn.Linear(hidden, 1), nn.Sigmoid())

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.net(x).squeeze(-1)


class CollaborativeFusion(nn.Module):
    def __init__(self, dim: int, cfg: CofmConfig | None = None):
        super().__init__()
        cfg = cfg or CofmConfig()
        self.dim = dim
        self.scale = dim**-0.5
        # Stage 1: shared projections over the 2-token (motion, emotion) sequence.
        self.col_q = nn.Linear(dim, dim)
        self.col_k = nn.Linear(dim, dim)
        self.col_v = nn.Linear(dim, dim)
        # Stage 2: per-branch enhancement attention.
        self.enhance_m = CrossEnhance(dim, cfg.heads)
        self.enhance_e = CrossEnhance(dim, cfg.heads)
        # Stage 3: gates.
        self.gate_m = GateNet(dim, cfg.gate_hidden_ratio)
        self.gate_e = GateNet(dim, cfg.gate_hidden_ratio)

    def collaborate(self, f_m_perp: torch.Tensor, f_e_perp: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        mix = torch.stack([f_m_perp, f_e_perp], dim=1)  # [B, 2, D]
        q, k, v = self.col_q(mix), self.col_k(mix), self.col_v(mix)
        attn = (q @ k.transpose(1, 2)) * self.scale  # [B, 2, 2]
        attn = attn.softmax(dim=-1)
        col = attn @ v  # [B, 2, D]
        return col[:, 0], col[:, 1]

    def forward(self, f_m_perp: torch.Tensor, f_e_perp: torch.Tensor) -> FusionOutput:
        if f_m_perp.shape != f_e_perp.shape:
            raise ShapeMismatch(f"feature shapes differ: {f_m_perp.shape} vs {f_e_perp.shape}")
        f_col_m, f_col_e = self.collaborate(f_m_perp, f_e_perp)
        f_prime_m = self.enhance_m(f_m_perp, f_col_m)
        f_prime_e = self.enhance_e(f_e_perp, f_col_e)
        g_m = self.gate_m(f_prime_m)
        g_e = self.gate_e(f_prime_e)
        w_m = g_m / (g_m + g_e)
        w_e = 1.0 - w_m
        f_fusion = w_m.unsqueeze(-1) * f_prime_m + w_e.unsqueeze(-1) * f_prime_e
        return FusionOutput(f_col_m, f_col_e, f_prime_m, f_prime_e, w_m, w_e, f_fusion)
