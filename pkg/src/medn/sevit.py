"""Sparse emotion vision transformer.

Tokens keep their full temporal extent while space is tiled into s x s
disjoint blocks; self-attention runs independently inside each block, so a
token can only mix with tokens of its own spatial block.  s=1 recovers a
plain global-attention transformer.  Branches at several sparsity rates are
fused with learnable scalar weights into the emotion feature.
"""

from __future__ import annotations

import torch
import torch.nn as nn

from .config import SevitConfig
from .errors import IndivisibleGrid, ShapeMismatch


def partition_tokens(tokens: torch.Tensor, s: int) -> torch.Tensor:
    """Split a token grid into s*s spatial blocks, temporal dim intact.

    tokens: [B, T, Hp, Wp, C] -> [B, s*s, T, Hp/s, Wp/s, C], blocks ordered
    row-major over the s x s tiling.
    """
    b, t, hp, wp, c = tokens.shape
    if hp % s != 0 or wp % s != 0:
        raise IndivisibleGrid(f"sparsity rate {s} does not divide token grid {hp}x{wp}")
    hb, wb = hp // s, wp // s
    x = tokens.reshape(b, t, s, hb, s, wb, c)
    x = x.permute(0, 2, 4, 1, 3, 5, 6)  # [B, s, s, T, hb, wb, C]
    return x.reshape(b, s * s, t, hb, wb, c)


def merge_tokens(blocks: torch.Tensor, s: int) -> torch.Tensor:
    """Inverse of partition_tokens."""
    b, n_blocks, t, hb, wb, c = blocks.shape
    if n_blocks != s * s:
        raise ShapeMismatch(f"expected {s * s} blocks, got {n_blocks}")
    x = blocks.reshape(b, s, s, t, hb, wb, c)
    x = x.permute(0, 3, 1, 4, 2, 5, 6)  # [B, T, s, hb, s, wb, C]
    return x.reshape(b, t, s * hb, s * wb, c)


class MultiHeadSelfAttention(nn.Module):
    def __init__(self, dim: int, heads: int):
        super().__init__()
        if dim % heads != 0:
            raise ShapeMismatch(f"embed dim {dim} not divisible by {heads} heads")
        self.heads = heads
        self.scale = (dim // heads) ** -0.5
        self.qkv = nn.Linear(dim, dim * 3)
        self.proj = nn.Linear(dim, dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        b, n, c = x.shape
        qkv = self.qkv(x).reshape(b, n, 3, self.heads, c // self.heads)
        q, k, v = qkv.permute(2, 0, 3, 1, 4)  # [B, heads, N, head_dim]
        attn = (q @ k.transpose(-2, -1)) * self.scale
        attn = attn.softmax(dim=-1)
        out = (attn @ v).transpose(1, 2).reshape(b, n, c)
        return self.proj(out)


class TransformerBlock(nn.Module):
    """Pre-norm attention + feedforward over a [B, N, C] sequence."""

    def __init__(self, dim: int, heads: int, mlp_ratio: int = 4):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim)
        self.attn = MultiHeadSelfAttention(dim, heads)
        self.norm2 = nn.LayerNorm(dim)
        self.mlp = nn.Sequential(
            nn.Linear(dim, dim * mlp_ratio),
            nn.GELU(),
            nn.Linear(dim * mlp_ratio, dim),
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = x + self.attn(self.norm1(x))
        x = x + self.mlp(self.norm2(x))
        return x


class SevitBlock(nn.Module):
    """One transformer block evaluated independently per spatial block."""

    def __init__(self, dim: int, heads: int, s: int):
        super().__init__()
        self.s = s
        self.inner = TransformerBlock(dim, heads)

    def forward(self, tokens: torch.Tensor) -> torch.Tensor:
        b, t, hp, wp, c = tokens.shape
        if self.s == 1:
            out = self.inner(tokens.reshape(b, t * hp * wp, c))
            return out.reshape(b, t, hp, wp, c)
        blocks = partition_tokens(tokens, self.s)  # [B, s*s, T, hb, wb, C]
        _, nb, _, hb, wb, _ = blocks.shape
        seq = blocks.reshape(b * nb, t * hb * wb, c)
        seq = self.inner(seq)
        blocks = seq.reshape(b, nb, t, hb, wb, c)
        return merge_tokens(blocks, self.s)


class TokenEmbed(nn.Module):
    """Patch embedding plus a learnable positional code per (t, h, w) slot.

    [B, T, C_in, H, W] -> [B, T, H/P, W/P, C_e]
    """

    def __init__(self, t: int, in_channels: int, height: int, width: int, patch: int, dim: int):
        super().__init__()
        if height % patch != 0 or width % patch != 0:
            raise IndivisibleGrid(f"patch {patch} does not divide {height}x{width}")
        self.patch = patch
        self.grid = (t, height // patch, width // patch)
        self.proj = nn.Linear(in_channels * patch * patch, dim)
        self.pos = nn.Parameter(torch.zeros(1, t, self.grid[1], self.grid[2], dim))
        nn.init.trunc_normal_(self.pos, std=0.02)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        b, t, c, h, w = x.shape
        if (t, h // self.patch, w // self.patch) != self.grid:
            raise ShapeMismatch(f"input {tuple(x.shape)} does not match token grid {self.grid}")
        p = self.patch
        hp, wp = self.grid[1], self.grid[2]
        x = x.reshape(b, t, c, hp, p, wp, p)
        x = x.permute(0, 1, 3, 5, 2, 4, 6).reshape(b, t, hp, wp, c * p * p)
        return self.proj(x) + self.pos


class SevitBranch(nn.Module):
    """Stack of sparse blocks at one rate, pooled and projected to D."""

    def __init__(self, dim: int, heads: int, s: int, depth: int, out_dim: int):
        super().__init__()
        self.blocks = nn.ModuleList(SevitBlock(dim, heads, s) for _ in range(depth))
        self.head = nn.Linear(dim, out_dim)

    def forward(self, tokens: torch.Tensor) -> torch.Tensor:
        for block in self.blocks:
            tokens = block(tokens)
        pooled = tokens.mean(dim=(1, 2, 3))  # [B, C_e]
        return self.head(pooled)


class MultiScaleSevit(nn.Module):
    """Shared token grid, independent branches per rate, weighted fusion.

    The fusion weights start at 1/K and are unconstrained afterwards.
    """

    def __init__(self, cfg: SevitConfig, t: int, in_channels: int, height: int, width: int, out_dim: int):
        super().__init__()
        self.embed = TokenEmbed(t, in_channels, height, width, cfg.patch, cfg.embed_dim)
        hp, wp = self.embed.grid[1], self.embed.grid[2]
        for s in cfg.rates:
            if hp % s != 0 or wp % s != 0:
                raise IndivisibleGrid(f"rate {s} does not divide token grid {hp}x{wp}")
        self.rates = list(cfg.rates)
        self.branches = nn.ModuleList(
            SevitBranch(cfg.embed_dim, cfg.heads, s, cfg.depth, out_dim) for s in cfg.rates
        )
        k = len(cfg.rates)
        self.gamma = nn.Parameter(torch.full((k,), 1.0 / k))

    def branch_features(self, flow: torch.Tensor) -> list[torch.Tensor]:
        tokens = self.embed(flow)
        return [branch(tokens) for branch in self.branches]

    def forward(self, flow: torch.Tensor) -> torch.Tensor:
        feats = self.branch_features(flow)
        stacked = torch.stack(feats, dim=0)  # [K, B, D]
        return torch.einsum("k,kbd->bd", self.gamma, stacked)
