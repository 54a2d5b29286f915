"""Temporal encoder: deformable (or dense) self-attention over frames."""

from __future__ import annotations

import torch
from torch import nn

from .deform import build_attention


class FeedForward(nn.Module):
    def __init__(self, dim: int, hidden: int, dropout: float):
        super().__init__()
        self.net = nn.Sequential(
            nn.Linear(dim, hidden),
            nn.ReLU(inplace=True),
            nn.Dropout(dropout),
            nn.Linear(hidden, dim),
        )

    def forward(self, x):
        return self.net(x)


class EncoderLayer(nn.Module):
    def __init__(self, dim: int, heads: int, points: int, ffn_dim: int,
                 dropout: float, mode: str):
        super().__init__()
        self.self_attn = build_attention(mode, dim, heads, points, dropout)
        self.norm1 = nn.LayerNorm(dim)
        self.norm2 = nn.LayerNorm(dim)
        self.ffn = FeedForward(dim, ffn_dim, dropout)
        self.dropout = nn.Dropout(dropout)

    def forward(self, x: torch.Tensor, references: torch.Tensor) -> torch.Tensor:
        x = self.norm1(x + self.dropout(self.self_attn(x, references, x)))
        x = self.norm2(x + self.dropout(self.ffn(x)))
        return x


class TemporalEncoder(nn.Module):
    """Stack of encoder layers; input is expected to already carry the
    positional code. With zero layers this is the identity."""

    def __init__(self, dim: int, heads: int, points: int, ffn_dim: int,
                 dropout: float, mode: str, num_layers: int):
        super().__init__()
        self.layers = nn.ModuleList(
            EncoderLayer(dim, heads, points, ffn_dim, dropout, mode)
            for _ in range(num_layers)
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        n_frames = x.shape[1]
        # each frame queries around its own bin center
        refs = (torch.arange(n_frames, dtype=x.dtype, device=x.device) + 0.5) / n_frames
        refs = refs.unsqueeze(0).expand(x.shape[0], -1)
        for layer in self.layers:
            x = layer(x, refs)
        return x
