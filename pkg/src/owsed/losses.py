"""Training objectives and the two-stage combination rule.

Sign conventions and normalizations:
  * classification: weighted mean cross-entropy over all queries, with
    queries supervised toward the no-event class downweighted;
  * localization: mean over one-to-one matched pairs only — adopted
    (semi-matched) queries contribute exactly zero;
  * eventness: plain sum of squared Mahalanobis distances over the
    matched set;
  * disentangle: mean absolute cosine between the two feature branches;
  * diversity: mean signed pairwise cosine over leftover queries.
"""

from __future__ import annotations

import logging

import torch
import torch.nn.functional as F

from .config import LossWeights, StageSchedule
from .matching import MatchAssignment, segment_iou
from .model.eventness import GaussianEventness

log = logging.getLogger(__name__)


def cls_loss(class_logits: torch.Tensor, assignment: MatchAssignment,
             target_classes: torch.Tensor, no_event_weight: float = 0.1) -> torch.Tensor:
    """Cross-entropy over one clip's queries (N, C+1).

    Fully- and semi-matched queries carry their target's class; everything
    else is supervised toward class 0.
    """
    n_queries = class_logits.shape[0]
    labels = torch.zeros(n_queries, dtype=torch.long, device=class_logits.device)
    weights = torch.full((n_queries,), no_event_weight,
                         dtype=class_logits.dtype, device=class_logits.device)
    for q, t in assignment.matched:
        labels[q] = int(target_classes[t])
        weights[q] = 1.0
    per_query = F.cross_entropy(class_logits, labels, reduction="none")
    total_weight = weights.sum()
    if float(total_weight) == 0.0:
        return class_logits.sum() * 0.0
    return (weights * per_query).sum() / total_weight


def loc_loss(boxes: torch.Tensor, assignment: MatchAssignment,
             target_boxes: torch.Tensor, weights: LossWeights) -> torch.Tensor:
    """Localization penalty over fully matched pairs, averaged by pair count."""
    if not assignment.fully_matched:
        return boxes.sum() * 0.0
    q_idx = torch.tensor([q for q, _ in assignment.fully_matched], device=boxes.device)
    t_idx = torch.tensor([t for _, t in assignment.fully_matched], device=boxes.device)
    pred = boxes[q_idx]
    tgt = target_boxes[t_idx]
    l1 = (pred - tgt).abs().sum(dim=-1)
    iou = segment_iou(pred, tgt)
    per_pair = weights.lambda_l1 * l1 + weights.lambda_iou * (1.0 - iou)
    return per_pair.mean()


def eventness_loss(matched_q_agn: torch.Tensor, gaussian: GaussianEventness) -> torch.Tensor:
    """Sum of squared Mahalanobis distances of matched queries to the
    stored class-agnostic Gaussian; empty input yields 0."""
    if matched_q_agn.numel() == 0:
        return torch.zeros((), dtype=matched_q_agn.dtype, device=matched_q_agn.device)
    return gaussian.mahalanobis_sq(matched_q_agn).sum()


def disentangle_loss(q_agn: torch.Tensor, q_spec: torch.Tensor) -> torch.Tensor:
    """Mean |cosine| between branch vectors; a zero-norm branch
    contributes 0 (the pair is already maximally independent)."""
    agn = q_agn.reshape(-1, q_agn.shape[-1])
    spec = q_spec.reshape(-1, q_spec.shape[-1])
    norm_a = agn.norm(dim=-1)
    norm_s = spec.norm(dim=-1)
    degenerate = (norm_a == 0) | (norm_s == 0)
    if bool(degenerate.any()):
        log.debug("disentangle_loss: %d zero-norm branch vector(s) contribute 0",
                  int(degenerate.sum()))
    denom = (norm_a * norm_s).clamp(min=1e-12)
    cos = (agn * spec).sum(dim=-1) / denom
    cos = torch.where(degenerate, torch.zeros_like(cos), cos)
    return cos.abs().mean()


def diversity_loss(unmatched_q: torch.Tensor) -> torch.Tensor:
    """Mean signed cosine over ordered pairs i != j; fewer than two
    queries yield 0. Lies in [-1, 1]."""
    n = unmatched_q.shape[0]
    if n < 2:
        return unmatched_q.sum() * 0.0
    norms = unmatched_q.norm(dim=-1, keepdim=True)
    unit = unmatched_q / norms.clamp(min=1e-12)
    unit = torch.where(norms == 0, torch.zeros_like(unit), unit)
    gram = unit @ unit.T
    off_diag = gram.sum() - gram.diagonal().sum()
    return off_diag / (n * (n - 1))


def total_loss(components: dict[str, torch.Tensor], weights: LossWeights,
               epoch: int, schedule: StageSchedule) -> tuple[torch.Tensor, dict[str, float]]:
    """Weighted combination; the diversity term is gated off in stage 1.

    Returns the differentiable total and a float breakdown for logging.
    `components` must hold cls, loc, eventness, disentangle, diversity.
    """
    lambda_div = weights.lambda_div if schedule.is_stage2(epoch) else 0.0
    total = (components["cls"]
             + components["loc"]
             + weights.lambda_e * components["eventness"]
             + weights.lambda_dis * components["disentangle"]
             + lambda_div * components["diversity"])
    breakdown = {
        "cls": _scalar(components["cls"]),
        "loc": _scalar(components["loc"]),
        "eventness": _scalar(components["eventness"]),
        "disentangle": _scalar(components["disentangle"]),
        "diversity": _scalar(components["diversity"]),
        "lambda_div_effective": lambda_div,
        "stage": 2 if schedule.is_stage2(epoch) else 1,
        "total": _scalar(total),
    }
    return total, breakdown


def _scalar(x) -> float:
    return float(x.detach()) if torch.is_tensor(x) else float(x)
