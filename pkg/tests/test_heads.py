import numpy as np
import pytest
import torch
import torch.nn.functional as F

from owsed.config import ModelConfig
from owsed.model.detector import OpenWorldDetector, load_checkpoint, save_checkpoint
from owsed.model.heads import Classifier, final_scores, predictions_from_outputs


def tiny_model(num_classes=2, **overrides):
    cfg = ModelConfig(embed_dim=8, heads=2, points=2, encoder_layers=1,
                      decoder_layers=2, num_queries=4, ffn_dim=16, dropout=0.0,
                      cnn_channels=(4, 4, 4, 4), num_known_classes=num_classes)
    for k, v in overrides.items():
        setattr(cfg, k, v)
    return OpenWorldDetector(cfg, input_bins=32)


def test_forward_shapes_and_simplex():
    model = tiny_model()
    model.eval()
    outputs = model(torch.randn(2, 1, 64, 32))
    assert len(outputs) == 2  # one dict per decoder layer
    final = outputs[-1]
    assert final["boxes"].shape == (2, 4, 2)
    assert final["class_logits"].shape == (2, 4, 3)
    probs = F.softmax(final["class_logits"], dim=-1)
    assert torch.allclose(probs.sum(-1), torch.ones(2, 4), atol=1e-6)
    assert float(final["eventness"].min()) > 0.0
    assert float(final["eventness"].max()) <= 1.0
    assert torch.allclose(final["q_agn"] + final["q_spec"], final["q"],
                          atol=1e-6, rtol=1e-6)


def test_boxes_are_sigmoid_bounded():
    model = tiny_model()
    outputs = model(torch.randn(1, 1, 64, 32))
    boxes = outputs[-1]["boxes"]
    assert float(boxes.min()) > 0.0
    assert float(boxes.max()) < 1.0


def test_final_scores_product_rule():
    probs = torch.tensor([[0.2, 0.5, 0.3]])
    eventness = torch.tensor([0.5])
    scores = final_scores(probs, eventness)
    assert torch.allclose(scores, torch.tensor([[0.1, 0.25, 0.15]]))
    # eventness of exactly 1 leaves the distribution untouched
    assert torch.equal(final_scores(probs, torch.tensor([1.0])), probs)
    assert bool((scores <= probs).all())


def test_prediction_records_satisfy_invariants():
    model = tiny_model()
    model.eval()
    outputs = model(torch.randn(1, 1, 64, 32))
    preds = predictions_from_outputs(outputs[-1], 0)
    assert len(preds) == 4
    for p in preds:
        assert abs(float(p.class_probs.sum()) - 1.0) < 1e-6
        assert np.all(p.final_scores <= p.class_probs + 1e-9)
        assert 0.0 < p.eventness <= 1.0


def test_classifier_growth_preserves_existing_logits():
    torch.manual_seed(0)
    clf = Classifier(dim=8, num_known_classes=2)
    probe = torch.randn(5, 8)
    before_weight = clf.linear.weight.clone()
    before_bias = clf.linear.bias.clone()
    before = clf(probe)
    clf.extend_classes(2)
    after = clf(probe)
    assert after.shape == (5, 5)
    # the contract is an exact weight copy; the wider GEMM may differ in
    # the last ulp on the same columns
    assert torch.equal(clf.linear.weight[:3], before_weight)
    assert torch.equal(clf.linear.bias[:3], before_bias)
    assert torch.allclose(after[:, :3], before, atol=1e-6)
    assert torch.equal(after[:, 3:], torch.zeros(5, 2))


def test_model_class_growth_on_fixed_probe():
    model = tiny_model(num_classes=2)
    model.eval()
    mel = torch.randn(1, 1, 64, 32)
    before = model(mel)[-1]["class_logits"]
    model.extend_classes(2)
    assert model.num_known_classes == 4
    after = model(mel)[-1]["class_logits"]
    assert torch.allclose(after[..., :3], before, atol=1e-6)


def test_checkpoint_round_trip(tmp_path):
    model = tiny_model()
    model.gaussian.update(torch.randn(16, model.dim))
    mel = torch.randn(1, 1, 64, 32)
    model.eval()
    before = model(mel)
    save_checkpoint(tmp_path / "ckpt.pt", model, extra={"note": 1})
    restored, payload = load_checkpoint(tmp_path / "ckpt.pt")
    restored.eval()
    after = restored(mel)
    assert payload["extra"]["note"] == 1
    for key in ("boxes", "class_logits", "eventness"):
        assert torch.equal(before[-1][key], after[-1][key])


def test_checkpoint_missing_file(tmp_path):
    from owsed.errors import CheckpointError

    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "absent.pt")
