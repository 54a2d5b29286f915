"""Event-slot decoder: query self-attention plus deformable cross-attention
against encoder memory, returning every intermediate layer for auxiliary
supervision."""

from __future__ import annotations

import torch
from torch import nn

from .deform import build_attention
from .encoder import FeedForward


class DecoderLayer(nn.Module):
    def __init__(self, dim: int, heads: int, points: int, ffn_dim: int,
                 dropout: float, mode: str):
        super().__init__()
        self.self_attn = nn.MultiheadAttention(dim, heads, dropout=dropout, batch_first=True)
        self.cross_attn = build_attention(mode, dim, heads, points, dropout)
        self.norm1 = nn.LayerNorm(dim)
        self.norm2 = nn.LayerNorm(dim)
        self.norm3 = nn.LayerNorm(dim)
        self.ffn = FeedForward(dim, ffn_dim, dropout)
        self.dropout = nn.Dropout(dropout)

    def forward(self, queries: torch.Tensor, references: torch.Tensor,
                memory: torch.Tensor) -> torch.Tensor:
        attended, _ = self.self_attn(queries, queries, queries, need_weights=False)
        queries = self.norm1(queries + self.dropout(attended))
        queries = self.norm2(queries + self.dropout(self.cross_attn(queries, references, memory)))
        queries = self.norm3(queries + self.dropout(self.ffn(queries)))
        return queries


class TemporalDecoder(nn.Module):
    """Learnable event slots with one learned reference point each.

    References are sigmoid-squashed scalars shared across layers; the
    slot embeddings are refined layer by layer. forward returns the
    per-layer query stack (L, B, N, D); with zero layers the stack holds
    just the initial embeddings.
    """

    def __init__(self, dim: int, heads: int, points: int, ffn_dim: int,
                 dropout: float, mode: str, num_layers: int, num_queries: int):
        super().__init__()
        self.query_embed = nn.Embedding(num_queries, dim)
        self.reference_logit = nn.Parameter(torch.zeros(num_queries))
        self.layers = nn.ModuleList(
            DecoderLayer(dim, heads, points, ffn_dim, dropout, mode)
            for _ in range(num_layers)
        )
        self._init_references()

    def _init_references(self):
        # spread initial references across the clip instead of stacking at 0.5
        n = self.reference_logit.shape[0]
        centers = (torch.arange(n, dtype=torch.float32) + 0.5) / n
        with torch.no_grad():
            self.reference_logit.copy_(torch.logit(centers, eps=1e-6))

    def forward(self, memory: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        bsz = memory.shape[0]
        queries = self.query_embed.weight.unsqueeze(0).expand(bsz, -1, -1)
        references = torch.sigmoid(self.reference_logit).unsqueeze(0).expand(bsz, -1)
        outputs = []
        for layer in self.layers:
            queries = layer(queries, references, memory)
            outputs.append(queries)
        if not outputs:
            outputs.append(queries)
        return torch.stack(outputs), references
