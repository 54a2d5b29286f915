"""The full detector plus checkpoint serialization.

forward returns one output dict per decoder layer (last entry = final
predictions) with keys:
  boxes        (B, N, 2)  normalized (center, width)
  class_logits (B, N, C+1)
  eventness    (B, N)     in (0, 1]
  q / q_agn / q_spec (B, N, D)
"""

from __future__ import annotations

import dataclasses
import os
import tempfile
from pathlib import Path

import torch
from torch import nn

from ..config import ModelConfig, dataclass_from_dict
from ..errors import CheckpointError
from .backbone import build_backbone
from .decoder import TemporalDecoder
from .disentangle import DisentangleBlock
from .encoder import TemporalEncoder
from .eventness import GaussianEventness
from .heads import BoundaryMLP, Classifier
from .position import sinusoidal_pos_encoding

CHECKPOINT_VERSION = 1


class OpenWorldDetector(nn.Module):
    def __init__(self, config: ModelConfig, input_bins: int):
        super().__init__()
        config.validate()
        if config.num_known_classes < 1:
            raise ValueError("num_known_classes must be set (>= 1) before building the model")
        self.config = dataclasses.replace(config)  # detached: class growth mutates our copy
        self.input_bins = input_bins

        self.backbone = build_backbone(config)
        _, f_out = self.backbone.out_shape(1, input_bins)
        self.freq_bins_out = f_out
        self.dim = config.embed_dim * f_out

        self.encoder = TemporalEncoder(self.dim, config.heads, config.points,
                                       config.ffn_dim, config.dropout,
                                       config.attention_mode_encoder, config.encoder_layers)
        self.decoder = TemporalDecoder(self.dim, config.heads, config.points,
                                       config.ffn_dim, config.dropout,
                                       config.attention_mode_decoder, config.decoder_layers,
                                       config.num_queries)
        self.disentangle = DisentangleBlock(self.dim, config.disentangle_layers)
        self.boundary = BoundaryMLP(self.dim)
        self.classifier = Classifier(self.dim, config.num_known_classes)
        self.gaussian = GaussianEventness(self.dim, config.gaussian_momentum,
                                          config.gaussian_eps_scale)

    @property
    def num_known_classes(self) -> int:
        return self.classifier.num_known_classes

    def forward(self, mel: torch.Tensor) -> list[dict]:
        feats = self.backbone(mel)  # (B, T, D)
        pos = sinusoidal_pos_encoding(feats.shape[1], self.freq_bins_out,
                                      self.config.embed_dim, dtype=feats.dtype)
        memory = self.encoder(feats + pos.to(feats.device))
        layer_queries, references = self.decoder(memory)

        outputs = []
        for q in layer_queries:
            q_agn, q_spec = self.disentangle(q)
            outputs.append({
                "boxes": self.boundary(q),
                "class_logits": self.classifier(q_spec),
                "eventness": self.gaussian.score(q_agn),
                "q": q,
                "q_agn": q_agn,
                "q_spec": q_spec,
                "references": references,
            })
        return outputs

    @torch.no_grad()
    def extend_classes(self, n_new: int):
        """Grow the known-class set; existing logit rows are preserved."""
        self.classifier.extend_classes(n_new)
        self.config.num_known_classes = self.classifier.num_known_classes


def save_checkpoint(path: str | Path, model: OpenWorldDetector, extra: dict | None = None):
    """Atomic (write-temp-then-rename) versioned checkpoint."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "format_version": CHECKPOINT_VERSION,
        "model_config": dataclasses.asdict(model.config),
        "input_bins": model.input_bins,
        "state_dict": model.state_dict(),
        "gaussian": model.gaussian.state(),
        "extra": extra or {},
    }
    fd, tmp_name = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            torch.save(payload, fh)
        os.replace(tmp_name, path)
    except BaseException:
        if os.path.exists(tmp_name):
            os.unlink(tmp_name)
        raise


def load_checkpoint(path: str | Path) -> tuple[OpenWorldDetector, dict]:
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint not found: {path}")
    try:
        payload = torch.load(path, map_location="cpu", weights_only=False)
    except Exception as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    version = payload.get("format_version")
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version!r}")
    config = dataclass_from_dict(ModelConfig, payload["model_config"], "model")
    model = OpenWorldDetector(config, payload["input_bins"])
    model.load_state_dict(payload["state_dict"])
    model.gaussian.load_state(payload["gaussian"])
    return model, payload
