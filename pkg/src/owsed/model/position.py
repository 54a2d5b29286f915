"""Temporal sinusoidal position codes, broadcast across frequency."""

from __future__ import annotations

import torch


def sinusoidal_time_encoding(n_frames: int, dim: int,
                             dtype: torch.dtype = torch.float32) -> torch.Tensor:
    """(T, dim) table: channel 2i is sin(t / 10000^(2i/dim)), channel 2i+1 the cos."""
    if dim % 2 != 0:
        raise ValueError(f"encoding dim must be even, got {dim}")
    t = torch.arange(n_frames, dtype=dtype).unsqueeze(1)  # (T, 1)
    i = torch.arange(dim // 2, dtype=dtype)
    angles = t / torch.pow(torch.tensor(10000.0, dtype=dtype), 2.0 * i / dim)  # (T, dim/2)
    enc = torch.empty(n_frames, dim, dtype=dtype)
    enc[:, 0::2] = torch.sin(angles)
    enc[:, 1::2] = torch.cos(angles)
    return enc


def sinusoidal_pos_encoding(n_frames: int, n_freq: int, dim: int,
                            dtype: torch.dtype = torch.float32) -> torch.Tensor:
    """Position table matching the (T, dim * n_freq) feature layout.

    The code depends only on the time index; every frequency bin at a
    given frame receives the same dim-sized vector. Layout matches the
    backbone flattening of (dim, T, F) into (T, dim * F): channel-major,
    frequency-minor.
    """
    per_frame = sinusoidal_time_encoding(n_frames, dim, dtype)  # (T, dim)
    expanded = per_frame.unsqueeze(2).expand(n_frames, dim, n_freq)  # (T, dim, F)
    return expanded.reshape(n_frames, dim * n_freq)
