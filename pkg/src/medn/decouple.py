"""Orthogonal disentanglement of the motion and emotion features.

Both feature vectors are L2-normalized, their mutual projection coefficient
alpha is removed from each, and the loss penalizes the squared inner product
of the two residuals, scaled by the feature dimension.  For unit inputs the
residual inner product has the closed form alpha**3 - alpha, so the loss is
D * (alpha**3 - alpha)**2: zero at alpha in {-1, 0, 1}, maximal on [0, 1] at
alpha = 1/sqrt(3).
"""

from __future__ import annotations

from typing import NamedTuple

import torch

EPS = 1e-8


class DecoupledPair(NamedTuple):
    f_m_hat: torch.Tensor  # [B, D]
    f_e_hat: torch.Tensor  # [B, D]
    alpha: torch.Tensor  # [B]
    f_m_perp: torch.Tensor  # [B, D]
    f_e_perp: torch.Tensor  # [B, D]


def orthogonalize(f_m: torch.Tensor, f_e: torch.Tensor, eps: float = EPS) -> DecoupledPair:
    """Normalize both features and strip each one's projection on the other."""
    f_m_hat = f_m / (f_m.norm(dim=-1, keepdim=True) + eps)
    f_e_hat = f_e / (f_e.norm(dim=-1, keepdim=True) + eps)
    alpha = (f_m_hat * f_e_hat).sum(dim=-1)
    f_m_perp = f_m_hat - alpha.unsqueeze(-1) * f_e_hat
    f_e_perp = f_e_hat - alpha.unsqueeze(-1) * f_m_hat
    return DecoupledPair(f_m_hat, f_e_hat, alpha, f_m_perp, f_e_perp)


def orth_loss(pair: DecoupledPair) -> torch.Tensor:
    """Mean over the batch of D * <f_m_perp, f_e_perp>**2."""
    d = pair.f_m_perp.shape[-1]
    inner = (pair.f_m_perp * pair.f_e_perp).sum(dim=-1)
    return (d * inner.pow(2)).mean()
