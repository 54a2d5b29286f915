"""Single-level temporal deformable attention.

Each query attends to a small set of fractional temporal positions
around its normalized reference point instead of the full sequence.
Offsets and per-point weights are linear functions of the query feature;
weights are softmax-normalized over the sampled points of each head.
"""

from __future__ import annotations

import torch
import torch.nn.functional as F
from torch import nn


def interpolate_1d(values: torch.Tensor, positions: torch.Tensor) -> torch.Tensor:
    """Linearly interpolate `values` (B, T, C) at fractional frame `positions` (B, S).

    Positions are clamped to [0, T - 1], so out-of-range samples read the
    boundary frame.
    """
    n_frames = values.shape[1]
    pos = positions.clamp(0.0, float(n_frames - 1))
    lower = pos.floor()
    frac = pos - lower  # gradient w.r.t. positions flows through this term
    i0 = lower.long()
    i1 = (i0 + 1).clamp(max=n_frames - 1)
    channels = values.shape[2]
    v0 = values.gather(1, i0.unsqueeze(-1).expand(-1, -1, channels))
    v1 = values.gather(1, i1.unsqueeze(-1).expand(-1, -1, channels))
    return v0 + (v1 - v0) * frac.unsqueeze(-1)


class TemporalDeformableAttention(nn.Module):
    """query (B, N, D), reference (B, N) in [0, 1], memory (B, T, D) -> (B, N, D)."""

    def __init__(self, dim: int, heads: int, points: int):
        super().__init__()
        if dim % heads != 0:
            raise ValueError(f"dim {dim} not divisible by heads {heads}")
        self.dim = dim
        self.heads = heads
        self.points = points
        self.sampling_offsets = nn.Linear(dim, heads * points)
        self.attention_weights = nn.Linear(dim, heads * points)
        self.value_proj = nn.Linear(dim, dim)
        self.output_proj = nn.Linear(dim, dim)
        self._reset_parameters()

    def _reset_parameters(self):
        # Zero offset weights with a symmetric spread of initial points:
        # head m starts looking (-1)^m frames away, point j at magnitude j+1.
        nn.init.constant_(self.sampling_offsets.weight, 0.0)
        direction = torch.tensor([(-1.0) ** m for m in range(self.heads)])
        magnitude = torch.arange(1, self.points + 1, dtype=torch.float32)
        init = direction.unsqueeze(1) * magnitude.unsqueeze(0)  # (heads, points)
        with torch.no_grad():
            self.sampling_offsets.bias.copy_(init.flatten())
        nn.init.constant_(self.attention_weights.weight, 0.0)
        nn.init.constant_(self.attention_weights.bias, 0.0)
        nn.init.xavier_uniform_(self.value_proj.weight)
        nn.init.constant_(self.value_proj.bias, 0.0)
        nn.init.xavier_uniform_(self.output_proj.weight)
        nn.init.constant_(self.output_proj.bias, 0.0)

    def forward(self, query: torch.Tensor, reference: torch.Tensor,
                memory: torch.Tensor) -> torch.Tensor:
        bsz, n_queries, _ = query.shape
        n_frames = memory.shape[1]
        m, j = self.heads, self.points
        head_dim = self.dim // m

        offsets = self.sampling_offsets(query).view(bsz, n_queries, m, j)
        weights = self.attention_weights(query).view(bsz, n_queries, m, j)
        weights = F.softmax(weights, dim=-1)  # sums to 1 over points, per head

        # normalized location r_q + dt / T, then to frame units with the
        # half-frame shift so reference (t + 0.5) / T lands exactly on frame t
        locations = reference.unsqueeze(-1).unsqueeze(-1) + offsets / n_frames
        frame_pos = locations * n_frames - 0.5  # (B, N, m, j)

        value = self.value_proj(memory).view(bsz, n_frames, m, head_dim)
        value = value.permute(0, 2, 1, 3).reshape(bsz * m, n_frames, head_dim)
        flat_pos = frame_pos.permute(0, 2, 1, 3).reshape(bsz * m, n_queries * j)
        sampled = interpolate_1d(value, flat_pos).view(bsz, m, n_queries, j, head_dim)

        flat_weights = weights.permute(0, 2, 1, 3)  # (B, m, N, j)
        head_out = (flat_weights.unsqueeze(-1) * sampled).sum(dim=3)  # (B, m, N, head_dim)
        concat = head_out.permute(0, 2, 1, 3).reshape(bsz, n_queries, self.dim)
        return self.output_proj(concat)


class DenseAttention(nn.Module):
    """Standard multi-head attention with the same call shape as the
    deformable module (the reference argument is ignored)."""

    def __init__(self, dim: int, heads: int, dropout: float = 0.0):
        super().__init__()
        self.attn = nn.MultiheadAttention(dim, heads, dropout=dropout, batch_first=True)

    def forward(self, query, reference, memory):
        out, _ = self.attn(query, memory, memory, need_weights=False)
        return out


def build_attention(mode: str, dim: int, heads: int, points: int, dropout: float):
    if mode == "deformable":
        return TemporalDeformableAttention(dim, heads, points)
    if mode == "dense":
        return DenseAttention(dim, heads, dropout)
    raise ValueError(f"unknown attention mode {mode!r}")
