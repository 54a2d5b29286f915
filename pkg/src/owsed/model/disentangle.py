"""Split a query feature into class-agnostic and class-specific parts.

The agnostic part is a learned function of the query; the specific part
is the residual, so the two always sum back to the input exactly.
"""

from __future__ import annotations

import torch
from torch import nn


class DisentangleBlock(nn.Module):
    def __init__(self, dim: int, num_layers: int = 2):
        super().__init__()
        layers: list[nn.Module] = []
        for i in range(num_layers):
            layers.append(nn.Linear(dim, dim))
            if i < num_layers - 1:
                layers.append(nn.ReLU(inplace=True))
        self.net = nn.Sequential(*layers)

    def forward(self, q: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """Returns (agnostic, specific) with agnostic + specific == q."""
        agnostic = self.net(q)
        return agnostic, q - agnostic
