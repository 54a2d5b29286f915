"""Feature-extraction backbones.

Both backbones map a mel tensor (B, 1, T0, F0) to (B, T, D) where
D = embed_dim * F_out. All convolutions use "same"-style padding, so
every stride-s stage maps length n to ceil(n / s); output shapes are
exact functions of the configured strides.
"""

from __future__ import annotations

import math

import numpy as np
import torch
from torch import nn

from ..config import ModelConfig
from ..data.mel import FeatureSequence
from ..errors import DataError


def strided_length(n: int, strides) -> int:
    for s in strides:
        n = math.ceil(n / s)
    return n


class SmallCnnBackbone(nn.Module):
    """Stack of conv blocks (conv3x3 -> GroupNorm -> GELU) plus a 1x1
    projection to the transformer channel width."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.time_strides = tuple(config.cnn_time_strides)
        self.freq_strides = tuple(config.cnn_freq_strides)
        blocks = []
        in_ch = 1
        for ch, ts, fs in zip(config.cnn_channels, self.time_strides, self.freq_strides):
            blocks += [
                nn.Conv2d(in_ch, ch, kernel_size=3, stride=(ts, fs), padding=1),
                nn.GroupNorm(math.gcd(8, ch), ch),
                nn.GELU(),
            ]
            in_ch = ch
        self.blocks = nn.Sequential(*blocks)
        self.project = nn.Conv2d(in_ch, config.embed_dim, kernel_size=1)

    def forward(self, mel: torch.Tensor) -> torch.Tensor:
        feats = self.project(self.blocks(mel))  # (B, d, T, F)
        b, d, t, f = feats.shape
        return feats.permute(0, 2, 1, 3).reshape(b, t, d * f)

    def out_shape(self, t0: int, f0: int) -> tuple[int, int]:
        return strided_length(t0, self.time_strides), strided_length(f0, self.freq_strides)

    @property
    def time_reduction(self) -> int:
        return int(np.prod(self.time_strides))


class Resnet50Backbone(nn.Module):
    """Torchvision ResNet-50 trunk adapted to single-channel input.

    Weights are randomly initialized; pretrained checkpoints can be
    loaded externally through the standard state-dict mechanism.
    """

    def __init__(self, config: ModelConfig):
        super().__init__()
        from torchvision.models import resnet50

        trunk = resnet50(weights=None)
        trunk.conv1 = nn.Conv2d(1, 64, kernel_size=7, stride=2, padding=3, bias=False)
        self.stem = nn.Sequential(trunk.conv1, trunk.bn1, trunk.relu, trunk.maxpool)
        self.stages = nn.Sequential(trunk.layer1, trunk.layer2, trunk.layer3, trunk.layer4)
        self.project = nn.Conv2d(2048, config.embed_dim, kernel_size=1)
        self.time_strides = (2, 2, 2, 2, 2)
        self.freq_strides = (2, 2, 2, 2, 2)

    def forward(self, mel: torch.Tensor) -> torch.Tensor:
        feats = self.project(self.stages(self.stem(mel)))
        b, d, t, f = feats.shape
        return feats.permute(0, 2, 1, 3).reshape(b, t, d * f)

    def out_shape(self, t0: int, f0: int) -> tuple[int, int]:
        return strided_length(t0, self.time_strides), strided_length(f0, self.freq_strides)

    @property
    def time_reduction(self) -> int:
        return int(np.prod(self.time_strides))


def build_backbone(config: ModelConfig) -> nn.Module:
    if config.backbone == "small_cnn":
        return SmallCnnBackbone(config)
    if config.backbone == "resnet50":
        return Resnet50Backbone(config)
    raise ValueError(f"unknown backbone {config.backbone!r}")


def backbone_forward(backbone: nn.Module, mel: np.ndarray | torch.Tensor,
                     mel_frame_rate: float, clip_id: str = "") -> FeatureSequence:
    """Run one clip through a backbone in eval mode."""
    mel_t = torch.as_tensor(np.asarray(mel), dtype=torch.float32)
    if mel_t.ndim != 3:
        raise DataError(f"expected mel of shape (1, T0, F0), got {tuple(mel_t.shape)}")
    if not torch.isfinite(mel_t).all():
        raise DataError(f"mel for clip {clip_id!r} contains non-finite values")
    was_training = backbone.training
    backbone.eval()
    with torch.no_grad():
        values = backbone(mel_t.unsqueeze(0))[0]
    backbone.train(was_training)
    return FeatureSequence(values=values,
                           frame_rate=mel_frame_rate / backbone.time_reduction,
                           clip_id=clip_id)
