"""Class-agnostic Gaussian over query features and the derived eventness score.

The running (mean, covariance) estimate is held in buffers and updated
with batch statistics under an exponential moving average; scoring never
backpropagates into the stored distribution, only into the query.
"""

from __future__ import annotations

import torch
from torch import nn


class GaussianEventness(nn.Module):
    def __init__(self, dim: int, momentum: float = 0.1, eps_scale: float = 1e-4):
        super().__init__()
        self.momentum = momentum
        self.eps_scale = eps_scale
        self.register_buffer("mean", torch.zeros(dim))
        self.register_buffer("cov", torch.eye(dim))

    def regularized_cov(self) -> torch.Tensor:
        dim = self.cov.shape[0]
        eps = self.eps_scale * torch.diagonal(self.cov).sum() / dim
        return self.cov + eps * torch.eye(dim, dtype=self.cov.dtype, device=self.cov.device)

    def mahalanobis_sq(self, q: torch.Tensor) -> torch.Tensor:
        """Squared Mahalanobis distance of q (..., D) to the stored Gaussian.

        Computed through a Cholesky solve; a factorization failure
        signals a corrupted state and is allowed to propagate.
        """
        chol = torch.linalg.cholesky(self.regularized_cov())
        delta = (q - self.mean).reshape(-1, q.shape[-1], 1)
        z = torch.linalg.solve_triangular(chol, delta, upper=False)
        return z.pow(2).sum(dim=(1, 2)).reshape(q.shape[:-1])

    def score(self, q: torch.Tensor) -> torch.Tensor:
        """exp(-d^2): 1 exactly at the mean, approaching 0 far from it.

        Clamped at the smallest positive normal so float underflow cannot
        produce an exact 0 (the true value is always positive)."""
        d2 = self.mahalanobis_sq(q)
        return torch.exp(-d2).clamp_min(torch.finfo(d2.dtype).tiny)

    @torch.no_grad()
    def update(self, batch: torch.Tensor) -> bool:
        """EMA update from a (K, D) batch; skipped when K < 2 (covariance
        undefined). Returns whether an update happened."""
        if batch.ndim != 2:
            batch = batch.reshape(-1, self.mean.shape[0])
        k = batch.shape[0]
        if k < 2:
            return False
        batch = batch.to(self.mean.dtype)
        batch_mean = batch.mean(dim=0)
        centered = batch - batch_mean
        batch_cov = centered.T @ centered / (k - 1)
        m = self.momentum
        self.mean.mul_(1.0 - m).add_(batch_mean, alpha=m)
        self.cov.mul_(1.0 - m).add_(batch_cov, alpha=m)
        return True

    def state(self) -> dict:
        return {"mean": self.mean.clone(), "cov": self.cov.clone(),
                "momentum": self.momentum, "eps_scale": self.eps_scale}

    def load_state(self, state: dict):
        self.mean.copy_(state["mean"])
        self.cov.copy_(state["cov"])
        self.momentum = float(state["momentum"])
        self.eps_scale = float(state["eps_scale"])
