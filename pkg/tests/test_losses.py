import math

import numpy as np
import pytest
import torch

from oracles import (cls_loss_oracle, directional_gradient, disentangle_loss_oracle,
                     diversity_loss_oracle, loc_loss_oracle, mahalanobis_sq_oracle)
from owsed.config import LossWeights, StageSchedule
from owsed.losses import (cls_loss, disentangle_loss, diversity_loss,
                          eventness_loss, loc_loss, total_loss)
from owsed.matching import MatchAssignment
from owsed.model.eventness import GaussianEventness

W = LossWeights()


def assignment(fully=(), semi=(), n_queries=4):
    used = {q for q, _ in fully} | {q for q, _ in semi}
    return MatchAssignment(fully_matched=list(fully), semi_matched=list(semi),
                           unmatched=set(range(n_queries)) - used)


class TestClsLoss:
    def test_perfect_one_hot_is_zero(self):
        logits = torch.full((3, 3), -40.0)
        logits[0, 1] = 40.0
        logits[1, 2] = 40.0
        logits[2, 0] = 40.0
        a = assignment(fully=[(0, 0), (1, 1)], n_queries=3)
        targets = torch.tensor([1, 2])
        assert float(cls_loss(logits, a, targets)) == pytest.approx(0.0, abs=1e-12)

    def test_uniform_over_three_classes_is_ln3(self):
        logits = torch.zeros(5, 3)
        a = assignment(fully=[(0, 0)], semi=[(1, 0)], n_queries=5)
        targets = torch.tensor([2])
        assert float(cls_loss(logits, a, targets)) == pytest.approx(math.log(3.0), rel=1e-6)

    def test_semi_matched_supervised_like_fully_matched(self):
        torch.manual_seed(0)
        logits = torch.randn(4, 3)
        targets = torch.tensor([1])
        as_full = assignment(fully=[(2, 0)], n_queries=4)
        as_semi = assignment(semi=[(2, 0)], n_queries=4)
        assert float(cls_loss(logits, as_full, targets)) == \
            float(cls_loss(logits, as_semi, targets))

    def test_matches_scalar_oracle(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            n_q, n_c = int(rng.integers(2, 7)), int(rng.integers(1, 4))
            logits = rng.normal(0, 2, (n_q, n_c + 1))
            n_t = int(rng.integers(1, n_q + 1))
            target_classes = rng.integers(1, n_c + 1, n_t)
            fully = [(q, t) for t, q in enumerate(rng.permutation(n_q)[:n_t])]
            a = assignment(fully=fully, n_queries=n_q)
            got = float(cls_loss(torch.from_numpy(logits), a,
                                 torch.from_numpy(target_classes), no_event_weight=0.1))
            labels = [0] * n_q
            weights = [0.1] * n_q
            for q, t in fully:
                labels[q] = int(target_classes[t])
                weights[q] = 1.0
            assert got == pytest.approx(cls_loss_oracle(logits, labels, weights), rel=1e-9)


class TestLocLoss:
    def test_exact_localization_is_zero(self):
        boxes = torch.tensor([[0.5, 0.2], [0.3, 0.1]])
        a = assignment(fully=[(0, 0), (1, 1)], n_queries=2)
        assert float(loc_loss(boxes, a, boxes.clone(), W)) == 0.0

    def test_semi_matched_pairs_contribute_nothing(self):
        boxes = torch.tensor([[0.5, 0.2], [0.9, 0.05]], requires_grad=True)
        targets = torch.tensor([[0.4, 0.3]])
        a = assignment(semi=[(0, 0), (1, 0)], n_queries=2)
        out = loc_loss(boxes, a, targets, W)
        assert float(out) == 0.0
        # perturbing a semi-matched prediction leaves the loss at zero
        shifted = boxes.detach() + torch.tensor([[0.1, 0.05], [0.0, 0.0]])
        assert float(loc_loss(shifted, a, targets, W)) == 0.0

    def test_paper_weighted_arithmetic(self):
        # |dc| + |dw| = 0.1 and IoU = 0.8 -> 5 * 0.1 + 2 * 0.2 = 0.9
        targets = torch.tensor([[0.5, 0.9]])
        boxes = torch.tensor([[0.55, 0.85]])  # l1 = 0.1
        a = assignment(fully=[(0, 0)], n_queries=1)
        # intervals [0.125, 0.975] and [0.05, 0.95]: inter 0.825, union 0.925
        iou = 0.825 / 0.925
        expected = 5.0 * 0.1 + 2.0 * (1.0 - iou)
        assert float(loc_loss(boxes, a, targets, W)) == pytest.approx(expected, rel=1e-5)

    def test_matches_scalar_oracle(self):
        rng = np.random.default_rng(1)
        for _ in range(50):
            n_q = int(rng.integers(1, 6))
            n_t = int(rng.integers(1, n_q + 1))
            boxes = np.stack([rng.uniform(0.1, 0.9, n_q), rng.uniform(0.05, 0.4, n_q)], 1)
            targets = np.stack([rng.uniform(0.1, 0.9, n_t), rng.uniform(0.05, 0.4, n_t)], 1)
            fully = [(q, t) for t, q in enumerate(rng.permutation(n_q)[:n_t])]
            a = assignment(fully=fully, n_queries=n_q)
            got = float(loc_loss(torch.from_numpy(boxes), a, torch.from_numpy(targets), W))
            assert got == pytest.approx(
                loc_loss_oracle(boxes, targets, fully, W.lambda_l1, W.lambda_iou), rel=1e-9)


class TestEventnessLoss:
    def test_all_at_mean_is_zero(self):
        g = GaussianEventness(4).double()
        q = g.mean.expand(5, 4).clone()
        assert float(eventness_loss(q, g)) == 0.0

    def test_identity_cov_distance_two_gives_four(self):
        g = GaussianEventness(4, eps_scale=0.0).double()
        q = torch.zeros(1, 4, dtype=torch.float64)
        q[0, 0] = 2.0
        assert float(eventness_loss(q, g)) == pytest.approx(4.0, rel=1e-12)

    def test_empty_matched_set_is_zero(self):
        g = GaussianEventness(4)
        assert float(eventness_loss(torch.zeros(0, 4), g)) == 0.0

    def test_matches_dense_inverse_oracle(self):
        rng = np.random.default_rng(2)
        for _ in range(30):
            dim = int(rng.integers(2, 5))
            g = GaussianEventness(dim, eps_scale=0.0).double()
            a = rng.normal(0, 1, (dim, dim))
            with torch.no_grad():
                g.mean.copy_(torch.from_numpy(rng.normal(0, 1, dim)))
                g.cov.copy_(torch.from_numpy(a @ a.T + 0.5 * np.eye(dim)))
            qs = rng.normal(0, 1, (4, dim))
            got = float(eventness_loss(torch.from_numpy(qs), g))
            expected = sum(mahalanobis_sq_oracle(q, g.mean.numpy(), g.cov.numpy())
                           for q in qs)
            assert got == pytest.approx(expected, rel=1e-9)


class TestDisentangleLoss:
    def test_orthogonal_pairs_zero(self):
        agn = torch.tensor([[1.0, 0.0], [0.0, 2.0]])
        spec = torch.tensor([[0.0, 3.0], [1.0, 0.0]])
        assert float(disentangle_loss(agn, spec)) == 0.0

    def test_parallel_pairs_one(self):
        agn = torch.tensor([[1.0, 2.0]])
        assert float(disentangle_loss(agn, agn * 3)) == pytest.approx(1.0, rel=1e-6)

    def test_zero_norm_branch_contributes_zero(self):
        agn = torch.tensor([[0.0, 0.0], [1.0, 0.0]])
        spec = torch.tensor([[1.0, 1.0], [1.0, 0.0]])
        assert float(disentangle_loss(agn, spec)) == pytest.approx(0.5, rel=1e-6)

    def test_scale_invariance(self):
        rng = np.random.default_rng(3)
        agn = torch.from_numpy(rng.normal(0, 1, (5, 4)))
        spec = torch.from_numpy(rng.normal(0, 1, (5, 4)))
        base = float(disentangle_loss(agn, spec))
        assert float(disentangle_loss(agn * 7.3, spec)) == pytest.approx(base, rel=1e-9)
        assert float(disentangle_loss(agn, spec * 0.02)) == pytest.approx(base, rel=1e-9)

    def test_matches_scalar_oracle_and_range(self):
        rng = np.random.default_rng(4)
        for _ in range(40):
            n, d = int(rng.integers(1, 6)), int(rng.integers(2, 5))
            agn = rng.normal(0, 1, (n, d))
            spec = rng.normal(0, 1, (n, d))
            got = float(disentangle_loss(torch.from_numpy(agn), torch.from_numpy(spec)))
            assert got == pytest.approx(disentangle_loss_oracle(agn, spec), rel=1e-9)
            assert 0.0 <= got <= 1.0


class TestDiversityLoss:
    def test_orthogonal_pair_zero(self):
        q = torch.tensor([[1.0, 0.0], [0.0, 1.0]])
        assert float(diversity_loss(q)) == pytest.approx(0.0, abs=1e-9)

    def test_identical_queries_one(self):
        q = torch.tensor([[1.0, 2.0]]).repeat(4, 1)
        assert float(diversity_loss(q)) == pytest.approx(1.0, rel=1e-6)

    def test_fewer_than_two_is_zero(self):
        assert float(diversity_loss(torch.randn(1, 4))) == 0.0
        assert float(diversity_loss(torch.zeros(0, 4))) == 0.0

    def test_signed_cosine_can_go_negative(self):
        q = torch.tensor([[1.0, 0.0], [-1.0, 0.0]])
        assert float(diversity_loss(q)) == pytest.approx(-1.0, rel=1e-6)

    def test_matches_double_loop_oracle_and_range(self):
        rng = np.random.default_rng(5)
        for _ in range(40):
            n, d = int(rng.integers(2, 7)), int(rng.integers(2, 5))
            q = rng.normal(0, 1, (n, d))
            got = float(diversity_loss(torch.from_numpy(q)))
            assert got == pytest.approx(diversity_loss_oracle(q), rel=1e-9)
            assert -1.0 <= got <= 1.0

    def test_scale_invariance(self):
        rng = np.random.default_rng(6)
        q = rng.normal(0, 1, (4, 3))
        base = float(diversity_loss(torch.from_numpy(q)))
        scaled = q.copy()
        scaled[2] *= 11.0
        assert float(diversity_loss(torch.from_numpy(scaled))) == pytest.approx(base, rel=1e-9)


class TestTotalLoss:
    def components(self, div_value=0.7):
        return {
            "cls": torch.tensor(1.0, dtype=torch.float64, requires_grad=True),
            "loc": torch.tensor(0.5, dtype=torch.float64),
            "eventness": torch.tensor(2.0, dtype=torch.float64),
            "disentangle": torch.tensor(0.3, dtype=torch.float64),
            "diversity": torch.tensor(div_value, dtype=torch.float64),
        }

    def test_stage1_ignores_diversity_exactly(self):
        schedule = StageSchedule(total_epochs=10, stage2_start_epoch=5)
        a, _ = total_loss(self.components(0.0), W, epoch=0, schedule=schedule)
        b, _ = total_loss(self.components(123.0), W, epoch=4, schedule=schedule)
        assert float(a) == float(b)
        heavy = LossWeights(lambda_div=1e6)
        c, _ = total_loss(self.components(55.0), heavy, epoch=0, schedule=schedule)
        assert float(c) == float(a)

    def test_stage2_applies_diversity(self):
        schedule = StageSchedule(total_epochs=10, stage2_start_epoch=5)
        total, breakdown = total_loss(self.components(0.7), W, epoch=5, schedule=schedule)
        assert breakdown["stage"] == 2
        assert breakdown["lambda_div_effective"] == W.lambda_div
        expected = 1.0 + 0.5 + W.lambda_e * 2.0 + W.lambda_dis * 0.3 + W.lambda_div * 0.7
        assert float(total) == pytest.approx(expected, rel=1e-9)

    def test_breakdown_recombines_with_default_coefficients(self):
        # defaults: lambda_e 8e-4, lambda_dis 1e-3, lambda_div 1e-2
        schedule = StageSchedule(total_epochs=2, stage2_start_epoch=1)
        total, breakdown = total_loss(self.components(), W, epoch=1, schedule=schedule)
        recombined = (breakdown["cls"] + breakdown["loc"]
                      + 8e-4 * breakdown["eventness"]
                      + 1e-3 * breakdown["disentangle"]
                      + 1e-2 * breakdown["diversity"])
        assert abs(recombined - breakdown["total"]) < 1e-9

    def test_all_zero_components_give_zero(self):
        zeros = {k: torch.tensor(0.0) for k in
                 ("cls", "loc", "eventness", "disentangle", "diversity")}
        total, _ = total_loss(zeros, W, epoch=0, schedule=StageSchedule(1, 0))
        assert float(total) == 0.0


class TestGradients:
    def test_every_loss_matches_finite_differences(self):
        rng = np.random.default_rng(7)
        for _ in range(25):
            n_q, n_c, d = 5, 2, 4
            fully = [(0, 0), (3, 1)]
            semi = [(1, 0)]
            a = assignment(fully=fully, semi=semi, n_queries=n_q)
            target_classes = torch.tensor([1, 2])
            target_boxes = torch.from_numpy(
                np.stack([rng.uniform(0.2, 0.8, 2), rng.uniform(0.1, 0.3, 2)], 1))
            g = GaussianEventness(d).double()
            with torch.no_grad():
                m = rng.normal(0, 1, (d, d))
                g.cov.copy_(torch.from_numpy(m @ m.T + 0.5 * np.eye(d)))
                g.mean.copy_(torch.from_numpy(rng.normal(0, 1, d)))

            def combined(logits, boxes, agn, spec, um):
                return (cls_loss(logits, a, target_classes)
                        + loc_loss(torch.sigmoid(boxes), a, target_boxes, W)
                        + eventness_loss(agn, g)
                        + disentangle_loss(agn, spec)
                        + diversity_loss(um))

            inputs = [torch.from_numpy(rng.normal(0, 1, (n_q, n_c + 1))),
                      torch.from_numpy(rng.normal(0, 1, (n_q, 2))),
                      torch.from_numpy(rng.normal(0, 1, (n_q, d))),
                      torch.from_numpy(rng.normal(0, 1, (n_q, d))),
                      torch.from_numpy(rng.normal(0, 1, (3, d)))]
            ad, fd = directional_gradient(combined, inputs)
            rel = abs(ad - fd) / max(abs(ad), abs(fd), 1e-12)
            assert rel <= 1e-4
