"""Query-to-target assignment: optimal one-to-one matching plus the
adoption of extra well-contained, confident queries as semi-matched
positives. All functions are pure and operate on one clip at a time.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch
from scipy.optimize import linear_sum_assignment

from .config import CostWeights, MatchThresholds
from .data.annotations import ClipAnnotation
from .errors import ValidationError


@dataclass
class ClipTargets:
    """Ground-truth events of one clip in normalized (center, width) form."""

    class_ids: torch.Tensor  # (K,) long
    boxes: torch.Tensor  # (K, 2) float, columns (center, width)

    def __len__(self):
        return self.class_ids.shape[0]


def targets_from_clip(clip: ClipAnnotation) -> ClipTargets:
    """Times are normalized by the clip duration, not the frame count."""
    classes = [ev.class_id for ev in clip.events]
    boxes = [((ev.onset + ev.offset) / 2 / clip.duration, ev.duration / clip.duration)
             for ev in clip.events]
    return ClipTargets(
        class_ids=torch.tensor(classes, dtype=torch.long),
        boxes=torch.tensor(boxes, dtype=torch.float32).reshape(len(classes), 2),
    )


@dataclass
class MatchAssignment:
    """Partition of the query set for one clip."""

    fully_matched: list[tuple[int, int]]  # (query, target), targets distinct
    semi_matched: list[tuple[int, int]]  # (query, target), targets may repeat
    unmatched: set[int] = field(default_factory=set)

    @property
    def matched(self) -> list[tuple[int, int]]:
        return self.fully_matched + self.semi_matched

    def check_partition(self, n_queries: int):
        seen = [q for q, _ in self.fully_matched] + [q for q, _ in self.semi_matched]
        seen += list(self.unmatched)
        if sorted(seen) != list(range(n_queries)):
            raise ValidationError("match assignment does not partition the query set")
        full_targets = [t for _, t in self.fully_matched]
        if len(set(full_targets)) != len(full_targets):
            raise ValidationError("one-to-one matches share a target")


def segment_iou(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """IoU of (center, width) interval pairs; broadcasts over leading dims.

    The intersection is capped at the smaller width (an identity in exact
    arithmetic) so identical intervals score exactly 1 despite rounding
    in the center/width-to-endpoint conversion.
    """
    a_start, a_end = a[..., 0] - a[..., 1] / 2, a[..., 0] + a[..., 1] / 2
    b_start, b_end = b[..., 0] - b[..., 1] / 2, b[..., 0] + b[..., 1] / 2
    inter = (torch.minimum(a_end, b_end) - torch.maximum(a_start, b_start)).clamp(min=0)
    inter = torch.minimum(inter, torch.minimum(a[..., 1], b[..., 1]))
    union = a[..., 1] + b[..., 1] - inter
    return inter / union


def pairwise_segment_iou(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """(N, 2) x (K, 2) -> (N, K)."""
    return segment_iou(a.unsqueeze(1), b.unsqueeze(0))


def match_cost_matrix(final_scores: torch.Tensor, boxes: torch.Tensor,
                      targets: ClipTargets, weights: CostWeights) -> torch.Tensor:
    """(N, K) assignment cost: class score (negated), L1 box distance, IoU."""
    cost_class = -final_scores[:, targets.class_ids]
    cost_l1 = torch.cdist(boxes, targets.boxes, p=1)
    cost_iou = 1.0 - pairwise_segment_iou(boxes, targets.boxes)
    return (weights.class_weight * cost_class
            + weights.l1_weight * cost_l1
            + weights.iou_weight * cost_iou)


@torch.no_grad()
def hungarian_match(final_scores: torch.Tensor, boxes: torch.Tensor,
                    targets: ClipTargets, weights: CostWeights) -> list[tuple[int, int]]:
    """Globally optimal one-to-one assignment of queries to targets.

    Requires at least as many queries as targets; pairs are returned
    sorted by target index.
    """
    n_queries = boxes.shape[0]
    n_targets = len(targets)
    if n_targets == 0:
        return []
    if n_targets > n_queries:
        raise ValidationError(f"{n_targets} targets but only {n_queries} queries")
    cost = match_cost_matrix(final_scores, boxes, targets, weights)
    rows, cols = linear_sum_assignment(cost.detach().cpu().numpy())
    pairs = sorted(zip(rows.tolist(), cols.tolist()), key=lambda qt: qt[1])
    return pairs


@torch.no_grad()
def semi_match(final_scores: torch.Tensor, boxes: torch.Tensor, targets: ClipTargets,
               one_to_one: list[tuple[int, int]],
               thresholds: MatchThresholds) -> MatchAssignment:
    """Adopt leftover queries as extra positives.

    A query outside the one-to-one matching is semi-matched to a target
    of its own argmax known class when (1) that class's final score
    exceeds alpha and (2) the fraction of the predicted segment covered
    by the target exceeds beta. The best-covered target wins, earliest
    onset breaking ties.
    """
    n_queries = boxes.shape[0]
    taken = {q for q, _ in one_to_one}
    semi: list[tuple[int, int]] = []
    unmatched: set[int] = set()

    target_classes = targets.class_ids.tolist() if len(targets) else []
    for q in range(n_queries):
        if q in taken:
            continue
        known = final_scores[q, 1:]
        if known.numel() == 0:
            unmatched.add(q)
            continue
        class_id = int(known.argmax()) + 1
        if float(known[class_id - 1]) <= thresholds.alpha:
            unmatched.add(q)
            continue
        best = None
        p_start = float(boxes[q, 0] - boxes[q, 1] / 2)
        p_end = float(boxes[q, 0] + boxes[q, 1] / 2)
        p_len = max(p_end - p_start, 1e-12)
        for t, t_class in enumerate(target_classes):
            if t_class != class_id:
                continue
            t_start = float(targets.boxes[t, 0] - targets.boxes[t, 1] / 2)
            t_end = float(targets.boxes[t, 0] + targets.boxes[t, 1] / 2)
            ratio = max(min(p_end, t_end) - max(p_start, t_start), 0.0) / p_len
            if ratio <= thresholds.beta:
                continue
            key = (-ratio, t_start, t)
            if best is None or key < best[0]:
                best = (key, t)
        if best is None:
            unmatched.add(q)
        else:
            semi.append((q, best[1]))

    assignment = MatchAssignment(fully_matched=list(one_to_one), semi_matched=semi,
                                 unmatched=unmatched)
    assignment.check_partition(n_queries)
    return assignment
