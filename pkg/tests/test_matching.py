import numpy as np
import pytest
import torch

from oracles import hungarian_bruteforce
from owsed.config import CostWeights, MatchThresholds
from owsed.data.annotations import ClipAnnotation, EventLabel
from owsed.errors import ValidationError
from owsed.matching import (ClipTargets, hungarian_match, match_cost_matrix,
                            pairwise_segment_iou, segment_iou, semi_match,
                            targets_from_clip)

WEIGHTS = CostWeights()


def make_targets(classes, boxes):
    return ClipTargets(class_ids=torch.tensor(classes, dtype=torch.long),
                       boxes=torch.tensor(boxes, dtype=torch.float64).reshape(len(classes), 2))


def random_predictions(rng, n_queries, n_classes):
    scores = rng.uniform(0, 1, (n_queries, n_classes + 1))
    scores = scores / scores.sum(axis=1, keepdims=True)
    centers = rng.uniform(0.1, 0.9, n_queries)
    widths = rng.uniform(0.05, 0.4, n_queries)
    return (torch.from_numpy(scores),
            torch.from_numpy(np.stack([centers, widths], axis=1)))


class TestSegmentIou:
    def test_identical_intervals(self):
        a = torch.tensor([0.5, 0.2])
        assert float(segment_iou(a, a)) == 1.0

    def test_disjoint_intervals(self):
        a = torch.tensor([0.2, 0.2])
        b = torch.tensor([0.8, 0.2])
        assert float(segment_iou(a, b)) == 0.0

    def test_half_shifted(self):
        # [0, 1] vs [0.5, 1.5] as center/width -> intersection 0.5, union 1.5
        a = torch.tensor([0.5, 1.0])
        b = torch.tensor([1.0, 1.0])
        assert float(segment_iou(a, b)) == pytest.approx(1.0 / 3.0)

    def test_pairwise_shape(self):
        a = torch.rand(4, 2) + 0.05
        b = torch.rand(3, 2) + 0.05
        assert pairwise_segment_iou(a, b).shape == (4, 3)


class TestHungarian:
    def test_single_pair(self):
        scores, boxes = random_predictions(np.random.default_rng(0), 1, 2)
        targets = make_targets([1], [[0.5, 0.2]])
        assert hungarian_match(scores, boxes, targets, WEIGHTS) == [(0, 0)]

    def test_permutation_invariance(self):
        rng = np.random.default_rng(1)
        scores, boxes = random_predictions(rng, 6, 3)
        targets = make_targets([1, 2, 3], [[0.2, 0.1], [0.5, 0.2], [0.8, 0.1]])
        base = set(hungarian_match(scores, boxes, targets, WEIGHTS))
        perm = [2, 0, 1]
        permuted = make_targets([targets.class_ids[i] for i in perm],
                                [targets.boxes[i].tolist() for i in perm])
        pairs = hungarian_match(scores, boxes, permuted, WEIGHTS)
        recovered = {(q, perm[t]) for q, t in pairs}
        assert recovered == base

    def test_matches_bruteforce_minimum(self):
        rng = np.random.default_rng(2)
        for _ in range(60):
            n_targets = int(rng.integers(1, 6))
            n_queries = n_targets + int(rng.integers(0, 3))
            scores, boxes = random_predictions(rng, n_queries, 3)
            targets = make_targets(
                rng.integers(1, 4, n_targets).tolist(),
                np.stack([rng.uniform(0.1, 0.9, n_targets),
                          rng.uniform(0.05, 0.3, n_targets)], axis=1).tolist())
            cost = match_cost_matrix(scores, boxes, targets, WEIGHTS).numpy()
            pairs = hungarian_match(scores, boxes, targets, WEIGHTS)
            achieved = sum(cost[q, t] for q, t in pairs)
            assert achieved == pytest.approx(hungarian_bruteforce(cost), abs=1e-12)

    def test_more_targets_than_queries_rejected(self):
        scores, boxes = random_predictions(np.random.default_rng(3), 1, 2)
        targets = make_targets([1, 2], [[0.3, 0.1], [0.7, 0.1]])
        with pytest.raises(ValidationError):
            hungarian_match(scores, boxes, targets, WEIGHTS)

    def test_no_targets_gives_empty_matching(self):
        scores, boxes = random_predictions(np.random.default_rng(4), 3, 2)
        assert hungarian_match(scores, boxes, make_targets([], []), WEIGHTS) == []


class TestSemiMatch:
    def test_contained_confident_query_is_adopted(self):
        # query 1 fully inside the class-1 target with confidence 0.9
        scores = torch.tensor([[0.05, 0.9, 0.05],
                               [0.05, 0.9, 0.05]])
        boxes = torch.tensor([[0.5, 0.4], [0.5, 0.1]])
        targets = make_targets([1], [[0.5, 0.4]])
        pairs = [(0, 0)]
        out = semi_match(scores, boxes, targets, pairs, MatchThresholds(0.5, 0.5))
        assert out.semi_matched == [(1, 0)]
        assert out.unmatched == set()

    def test_low_confidence_stays_unmatched(self):
        scores = torch.tensor([[0.6, 0.3, 0.1], [0.6, 0.3, 0.1]])
        boxes = torch.tensor([[0.5, 0.4], [0.5, 0.1]])
        targets = make_targets([1], [[0.5, 0.4]])
        out = semi_match(scores, boxes, targets, [(0, 0)], MatchThresholds(0.5, 0.5))
        assert out.semi_matched == []
        assert out.unmatched == {1}

    def test_class_disagreement_blocks_adoption(self):
        # the query's argmax class is 2 but only a class-1 target overlaps
        scores = torch.tensor([[0.05, 0.9, 0.05], [0.05, 0.15, 0.8]])
        boxes = torch.tensor([[0.5, 0.4], [0.5, 0.1]])
        targets = make_targets([1], [[0.5, 0.4]])
        out = semi_match(scores, boxes, targets, [(0, 0)], MatchThresholds(0.5, 0.5))
        assert out.semi_matched == []

    def test_best_containment_wins_ties_by_onset(self):
        scores = torch.tensor([[0.05, 0.9, 0.05], [0.05, 0.9, 0.05]])
        boxes = torch.tensor([[0.2, 0.1], [0.5, 0.2]])
        # two same-class targets; the query [0.4, 0.6] is fully inside both,
        # the earlier-onset one wins the tie
        targets = make_targets([1, 1], [[0.5, 0.6], [0.55, 0.5]])
        out = semi_match(scores, boxes, targets, [(0, 0)], MatchThresholds(0.5, 0.5))
        assert out.semi_matched == [(1, 0)]

    def test_random_instances_satisfy_conditions_and_partition(self):
        rng = np.random.default_rng(5)
        thresholds = MatchThresholds(alpha=0.3, beta=0.6)
        for _ in range(100):
            n_targets = int(rng.integers(0, 5))
            n_queries = n_targets + int(rng.integers(1, 5))
            scores, boxes = random_predictions(rng, n_queries, 3)
            targets = make_targets(
                rng.integers(1, 4, n_targets).tolist(),
                np.stack([rng.uniform(0.1, 0.9, n_targets),
                          rng.uniform(0.05, 0.3, n_targets)], axis=1).tolist())
            pairs = hungarian_match(scores, boxes, targets, WEIGHTS)
            out = semi_match(scores, boxes, targets, pairs, thresholds)
            out.check_partition(n_queries)
            # exhaustive re-check of both adoption conditions
            for q, t in out.semi_matched:
                known = scores[q, 1:]
                class_id = int(known.argmax()) + 1
                assert int(targets.class_ids[t]) == class_id
                assert float(known[class_id - 1]) > thresholds.alpha
                p0 = float(boxes[q, 0] - boxes[q, 1] / 2)
                p1 = float(boxes[q, 0] + boxes[q, 1] / 2)
                t0 = float(targets.boxes[t, 0] - targets.boxes[t, 1] / 2)
                t1 = float(targets.boxes[t, 0] + targets.boxes[t, 1] / 2)
                ratio = max(0.0, min(p1, t1) - max(p0, t0)) / (p1 - p0)
                assert ratio > thresholds.beta

    def test_beta_one_with_outreaching_predictions_adopts_nothing(self):
        rng = np.random.default_rng(6)
        scores, _ = random_predictions(rng, 4, 2)
        scores[:, 1:] = 0.9  # confident everywhere
        boxes = torch.tensor([[0.5, 0.9]] * 4, dtype=torch.float64)  # wider than any target
        targets = make_targets([1, 2], [[0.4, 0.2], [0.6, 0.2]])
        pairs = hungarian_match(scores, boxes, targets, WEIGHTS)
        out = semi_match(scores, boxes, targets, pairs, MatchThresholds(0.1, 1.0))
        assert out.semi_matched == []

    def test_raising_thresholds_never_grows_the_semi_set(self):
        rng = np.random.default_rng(7)
        for _ in range(40):
            n_targets = int(rng.integers(1, 4))
            n_queries = n_targets + int(rng.integers(1, 4))
            scores, boxes = random_predictions(rng, n_queries, 2)
            targets = make_targets(
                rng.integers(1, 3, n_targets).tolist(),
                np.stack([rng.uniform(0.1, 0.9, n_targets),
                          rng.uniform(0.05, 0.3, n_targets)], axis=1).tolist())
            pairs = hungarian_match(scores, boxes, targets, WEIGHTS)
            lo = semi_match(scores, boxes, targets, pairs, MatchThresholds(0.1, 0.3))
            hi_alpha = semi_match(scores, boxes, targets, pairs, MatchThresholds(0.4, 0.3))
            hi_beta = semi_match(scores, boxes, targets, pairs, MatchThresholds(0.1, 0.7))
            assert set(hi_alpha.semi_matched) <= set(lo.semi_matched)
            assert set(hi_beta.semi_matched) <= set(lo.semi_matched)


def test_targets_from_clip_normalizes_by_duration():
    clip = ClipAnnotation("c", 10.0, [EventLabel(2, 4.0, 6.0)])
    targets = targets_from_clip(clip)
    assert targets.class_ids.tolist() == [2]
    assert targets.boxes[0].tolist() == pytest.approx([0.5, 0.2])
