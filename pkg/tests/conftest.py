import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from owsed.config import RunConfig


def tiny_config(**overrides) -> RunConfig:
    """Small model + dataset settings shared by integration-style tests."""
    cfg = RunConfig()
    cfg.seed = 11
    cfg.mel.n_mels = 32
    cfg.model.embed_dim = 16
    cfg.model.heads = 2
    cfg.model.points = 2
    cfg.model.encoder_layers = 1
    cfg.model.decoder_layers = 1
    cfg.model.num_queries = 6
    cfg.model.ffn_dim = 32
    cfg.model.dropout = 0.0
    cfg.schedule.total_epochs = 2
    cfg.schedule.stage2_start_epoch = 1
    cfg.train.batch_size = 4
    cfg.train.finetune.total_epochs = 1
    cfg.train.finetune.stage2_start_epoch = 1
    cfg.synth.n_train_clips = 10
    cfg.synth.n_eval_clips = 4
    cfg.synth.clip_duration = 4.0
    cfg.synth.max_event_duration = 2.0
    for key, value in overrides.items():
        setattr(cfg, key, value)
    return cfg


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory):
    """One shared synthetic dataset for pipeline and CLI tests."""
    from owsed.data.synth import write_dataset

    cfg = tiny_config()
    root = tmp_path_factory.mktemp("tiny_dataset")
    paths = write_dataset(cfg.synth, cfg.seed, root)
    return cfg, paths


def wire_dataset(cfg: RunConfig, paths: dict) -> RunConfig:
    cfg.data.train_annotations = str(paths["train_annotations"])
    cfg.data.eval_annotations = str(paths["eval_annotations"])
    cfg.data.vocabulary = str(paths["vocabulary"])
    cfg.data.task_map = str(paths["task_map"])
    cfg.data.audio_dir = str(paths["audio_dir"])
    return cfg
