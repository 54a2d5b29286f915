"""Prediction heads and the per-query prediction record.

Localization reads the original query feature, classification the
class-specific part, eventness the class-agnostic part; the reported
score of a class is its softmax probability multiplied by the eventness.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from ..errors import ValidationError


@dataclass
class EventPrediction:
    """One decoded query: normalized (center, width), class distribution
    over C+1 entries (index 0 = no known event), and the eventness scale."""

    center: float
    width: float
    class_probs: np.ndarray
    eventness: float
    final_scores: np.ndarray

    def __post_init__(self):
        if not 0.0 <= self.center <= 1.0 or not 0.0 < self.width <= 1.0:
            raise ValidationError(
                f"center must be in [0,1] and width in (0,1], got {self.center}, {self.width}")
        if abs(float(self.class_probs.sum()) - 1.0) > 1e-5:
            raise ValidationError("class_probs must sum to 1")
        if not 0.0 < self.eventness <= 1.0:
            raise ValidationError(f"eventness must be in (0,1], got {self.eventness}")


class BoundaryMLP(nn.Module):
    """3-layer MLP emitting sigmoid-squashed (center, width)."""

    def __init__(self, dim: int):
        super().__init__()
        self.net = nn.Sequential(
            nn.Linear(dim, dim), nn.ReLU(inplace=True),
            nn.Linear(dim, dim), nn.ReLU(inplace=True),
            nn.Linear(dim, 2),
        )

    def forward(self, q: torch.Tensor) -> torch.Tensor:
        return torch.sigmoid(self.net(q))


class Classifier(nn.Module):
    """Linear logits over C + 1 classes; index 0 means "no known event".

    The class set can grow in place: new logit rows are zero-initialized
    so existing logits are untouched at the instant of expansion.
    """

    def __init__(self, dim: int, num_known_classes: int):
        super().__init__()
        self.dim = dim
        self.num_known_classes = num_known_classes
        self.linear = nn.Linear(dim, num_known_classes + 1)

    def forward(self, q_spec: torch.Tensor) -> torch.Tensor:
        return self.linear(q_spec)

    @torch.no_grad()
    def extend_classes(self, n_new: int):
        if n_new < 0:
            raise ValidationError("cannot shrink the class set")
        if n_new == 0:
            return
        old = self.linear
        grown = nn.Linear(self.dim, self.num_known_classes + 1 + n_new)
        grown = grown.to(old.weight.device, old.weight.dtype)
        nn.init.constant_(grown.weight, 0.0)
        nn.init.constant_(grown.bias, 0.0)
        grown.weight[: old.out_features] = old.weight
        grown.bias[: old.out_features] = old.bias
        self.linear = grown
        self.num_known_classes += n_new


def final_scores(class_probs: torch.Tensor, eventness: torch.Tensor) -> torch.Tensor:
    """Product of the class distribution and the eventness scale."""
    return class_probs * eventness.unsqueeze(-1)


def predictions_from_outputs(outputs: dict, clip: int) -> list[EventPrediction]:
    """Decode one clip of a (batched) output dict into prediction records."""
    probs = F.softmax(outputs["class_logits"][clip], dim=-1)
    eventness = outputs["eventness"][clip]
    scores = final_scores(probs, eventness)
    boxes = outputs["boxes"][clip]
    preds = []
    for q in range(boxes.shape[0]):
        preds.append(EventPrediction(
            center=float(boxes[q, 0]),
            width=float(boxes[q, 1]),
            class_probs=probs[q].detach().cpu().numpy(),
            eventness=float(eventness[q]),
            final_scores=scores[q].detach().cpu().numpy(),
        ))
    return preds
