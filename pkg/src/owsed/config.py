"""Configuration dataclasses, YAML loading, and environment overrides.

The effective (merged) config is persisted into every run directory so a
run can be reproduced from its artifacts alone. Parsing is strict:
unknown keys are rejected rather than ignored.
"""

from __future__ import annotations

import dataclasses
import os
import types
import typing
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .errors import ConfigError

ENV_PREFIX = "OWSED_"


@dataclass
class MelConfig:
    sample_rate: int = 16_000
    n_fft: int = 1024
    win_length: int = 1024
    hop_length: int = 256
    n_mels: int = 64
    f_min: float = 0.0
    f_max: float | None = None  # defaults to sample_rate / 2
    # log(1 + x * compression_scale) applied to mel power
    compression_scale: float = 1e4

    def validate(self):
        if self.sample_rate <= 0 or self.hop_length <= 0 or self.n_mels <= 0:
            raise ConfigError("mel: sample_rate, hop_length, n_mels must be positive")
        if self.win_length > self.n_fft:
            raise ConfigError("mel: win_length must not exceed n_fft")
        f_max = self.f_max if self.f_max is not None else self.sample_rate / 2
        if not 0 <= self.f_min < f_max <= self.sample_rate / 2:
            raise ConfigError("mel: need 0 <= f_min < f_max <= Nyquist")

    @property
    def frame_rate(self) -> float:
        return self.sample_rate / self.hop_length


@dataclass
class ModelConfig:
    embed_dim: int = 256  # per-frequency channel width d
    heads: int = 8
    points: int = 4  # sampled temporal positions per head
    encoder_layers: int = 6
    decoder_layers: int = 6
    num_queries: int = 18
    num_known_classes: int = 0  # 0 means "set from the task split at run time"
    backbone: str = "small_cnn"  # {"small_cnn", "resnet50"}
    attention_mode_encoder: str = "deformable"  # {"deformable", "dense"}
    attention_mode_decoder: str = "deformable"
    ffn_dim: int = 1024
    dropout: float = 0.1
    disentangle_layers: int = 2
    aux_loss: bool = True
    # small_cnn layout: one entry per conv block
    cnn_channels: tuple[int, ...] = (32, 64, 64, 64)
    cnn_time_strides: tuple[int, ...] = (1, 2, 1, 2)
    cnn_freq_strides: tuple[int, ...] = (2, 2, 2, 2)
    # class-agnostic Gaussian over query features
    gaussian_momentum: float = 0.1
    gaussian_eps_scale: float = 1e-4

    def validate(self):
        if self.embed_dim < 1 or self.heads < 1 or self.points < 1:
            raise ConfigError("model: embed_dim, heads, points must be >= 1")
        if self.embed_dim % self.heads != 0:
            raise ConfigError("model: embed_dim must be divisible by heads")
        if self.num_queries < 1:
            raise ConfigError("model: num_queries must be >= 1")
        if self.backbone not in ("small_cnn", "resnet50"):
            raise ConfigError(f"model: unknown backbone {self.backbone!r}")
        for mode in (self.attention_mode_encoder, self.attention_mode_decoder):
            if mode not in ("deformable", "dense"):
                raise ConfigError(f"model: unknown attention mode {mode!r}")
        if not (len(self.cnn_channels) == len(self.cnn_time_strides) == len(self.cnn_freq_strides)):
            raise ConfigError("model: cnn_channels/time_strides/freq_strides lengths differ")
        if not 0.0 < self.gaussian_momentum <= 1.0:
            raise ConfigError("model: gaussian_momentum must be in (0, 1]")
        if self.disentangle_layers < 1:
            raise ConfigError("model: disentangle_layers must be >= 1")


@dataclass
class MatchThresholds:
    alpha: float = 0.5  # class-confidence threshold for adopting extra positives
    beta: float = 0.7  # containment-ratio threshold

    def validate(self):
        if not (0.0 <= self.alpha <= 1.0 and 0.0 <= self.beta <= 1.0):
            raise ConfigError("matching: alpha and beta must be in [0, 1]")


@dataclass
class CostWeights:
    class_weight: float = 2.0
    l1_weight: float = 5.0
    iou_weight: float = 2.0

    def validate(self):
        if min(self.class_weight, self.l1_weight, self.iou_weight) < 0:
            raise ConfigError("matching: cost weights must be >= 0")


@dataclass
class LossWeights:
    lambda_l1: float = 5.0
    lambda_iou: float = 2.0
    lambda_e: float = 8e-4
    lambda_dis: float = 1e-3
    lambda_div: float = 1e-2
    # cross-entropy weight on queries supervised toward the no-event class
    no_event_weight: float = 0.1

    def validate(self):
        values = (self.lambda_l1, self.lambda_iou, self.lambda_e,
                  self.lambda_dis, self.lambda_div, self.no_event_weight)
        if min(values) < 0:
            raise ConfigError("losses: all weights must be >= 0")


@dataclass
class StageSchedule:
    total_epochs: int = 200
    stage2_start_epoch: int = 100  # diversity objective active from this epoch on

    def validate(self):
        if not 0 <= self.stage2_start_epoch <= self.total_epochs:
            raise ConfigError("schedule: need 0 <= stage2_start_epoch <= total_epochs")

    def is_stage2(self, epoch: int) -> bool:
        return epoch >= self.stage2_start_epoch


@dataclass
class TrainConfig:
    lr: float = 1e-4
    weight_decay: float = 1e-4
    batch_size: int = 128
    grad_clip_norm: float = 0.1
    finetune_lr_factor: float = 0.1
    finetune: StageSchedule = field(default_factory=lambda: StageSchedule(200, 100))
    num_workers: int = 0  # read-only feature workers; 0 keeps the stream single-threaded

    def validate(self):
        if self.lr <= 0 or self.batch_size < 1:
            raise ConfigError("train: lr must be > 0 and batch_size >= 1")
        if not 0 < self.finetune_lr_factor <= 1:
            raise ConfigError("train: finetune_lr_factor must be in (0, 1]")
        self.finetune.validate()


@dataclass
class ReplayConfig:
    exemplars_per_class: int = 200

    def validate(self):
        if self.exemplars_per_class < 1:
            raise ConfigError("replay: exemplars_per_class must be >= 1")


@dataclass
class DecodeConfig:
    score_threshold: float = 0.3
    nms_iou: float = 0.5
    max_events_per_clip: int = 20

    def validate(self):
        if not (0.0 <= self.score_threshold <= 1.0 and 0.0 <= self.nms_iou <= 1.0):
            raise ConfigError("decode: thresholds must be in [0, 1]")
        if self.max_events_per_clip < 1:
            raise ConfigError("decode: max_events_per_clip must be >= 1")


@dataclass
class CollarConfig:
    onset_collar: float = 0.2  # seconds
    offset_collar: float = 0.2  # seconds, floor for the duration-scaled tolerance
    offset_duration_ratio: float = 0.2
    # "per_class": each true unknown class is matched independently against the
    # shared pool of unknown predictions; "global": one-to-one across all classes
    unknown_matching: str = "per_class"

    def validate(self):
        if min(self.onset_collar, self.offset_collar, self.offset_duration_ratio) < 0:
            raise ConfigError("collar: tolerances must be >= 0")
        if self.unknown_matching not in ("per_class", "global"):
            raise ConfigError(f"collar: unknown unknown_matching {self.unknown_matching!r}")


@dataclass
class SynthClassConfig:
    label: str
    kind: str = "tone"  # {"tone", "chirp", "noise_band"}
    freq: float = 1000.0  # tone frequency / chirp start / noise band center
    freq_end: float | None = None  # chirp end frequency
    bandwidth: float = 200.0  # noise band width

    def validate(self):
        if self.kind not in ("tone", "chirp", "noise_band"):
            raise ConfigError(f"synth: unknown sound kind {self.kind!r}")
        if self.freq <= 0:
            raise ConfigError("synth: freq must be > 0")


def _default_synth_classes() -> list[SynthClassConfig]:
    return [
        SynthClassConfig(label="tone_low", kind="tone", freq=500.0),
        SynthClassConfig(label="tone_mid", kind="tone", freq=1200.0),
        SynthClassConfig(label="tone_high", kind="tone", freq=2600.0),
        SynthClassConfig(label="tone_top", kind="tone", freq=5200.0),
    ]


@dataclass
class SynthConfig:
    classes: list[SynthClassConfig] = field(default_factory=_default_synth_classes)
    n_train_clips: int = 200
    n_eval_clips: int = 60
    clip_duration: float = 10.0
    sample_rate: int = 16_000
    events_per_clip_mean: float = 3.0
    overlap_probability: float = 0.3
    min_event_duration: float = 1.0
    max_event_duration: float = 3.0
    min_amplitude: float = 0.3
    max_amplitude: float = 0.6
    noise_level: float = 0.005
    # classes introduced per task, in task order; fractions of the class list
    classes_per_task: tuple[int, ...] = (2, 2)

    def validate(self):
        if len(self.classes) < 2:
            raise ConfigError("synth: need at least 2 classes")
        for c in self.classes:
            c.validate()
        labels = [c.label for c in self.classes]
        if len(set(labels)) != len(labels):
            raise ConfigError("synth: duplicate class labels")
        if sum(self.classes_per_task) != len(self.classes):
            raise ConfigError("synth: classes_per_task must sum to the class count")
        if self.events_per_clip_mean < 0 or not 0 <= self.overlap_probability <= 1:
            raise ConfigError("synth: invalid event-count or overlap settings")
        if not 0 < self.min_event_duration <= self.max_event_duration <= self.clip_duration:
            raise ConfigError("synth: invalid event duration range")


@dataclass
class DataConfig:
    train_annotations: str = ""
    eval_annotations: str = ""
    audio_dir: str = ""
    vocabulary: str = ""
    task_map: str = ""

    def validate(self):
        pass  # presence of files is checked where they are read


@dataclass
class RunConfig:
    run_name: str = "run"
    seed: int = 0
    device: str = "cpu"
    out_dir: str = "runs"
    mel: MelConfig = field(default_factory=MelConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    thresholds: MatchThresholds = field(default_factory=MatchThresholds)
    cost_weights: CostWeights = field(default_factory=CostWeights)
    losses: LossWeights = field(default_factory=LossWeights)
    schedule: StageSchedule = field(default_factory=StageSchedule)
    train: TrainConfig = field(default_factory=TrainConfig)
    replay: ReplayConfig = field(default_factory=ReplayConfig)
    decode: DecodeConfig = field(default_factory=DecodeConfig)
    collar: CollarConfig = field(default_factory=CollarConfig)
    data: DataConfig = field(default_factory=DataConfig)
    synth: SynthConfig = field(default_factory=SynthConfig)

    def validate(self):
        for sub in (self.mel, self.model, self.thresholds, self.cost_weights,
                    self.losses, self.schedule, self.train, self.replay,
                    self.decode, self.collar, self.data, self.synth):
            sub.validate()
        if self.device not in ("cpu", "cuda"):
            raise ConfigError(f"device must be 'cpu' or 'cuda', got {self.device!r}")
        return self


def _build(cls, data, path):
    """Construct dataclass `cls` from a plain dict, rejecting unknown keys."""
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected a mapping, got {type(data).__name__}")
    field_map = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(data) - set(field_map)
    if unknown:
        raise ConfigError(f"{path}: unknown key(s) {sorted(unknown)}")
    kwargs = {}
    for name, value in data.items():
        kwargs[name] = _coerce(field_map[name].type, value, f"{path}.{name}")
    try:
        return cls(**kwargs)
    except TypeError as exc:  # missing required field
        raise ConfigError(f"{path}: {exc}") from exc


def _coerce(annotation, value, path):
    if isinstance(annotation, str):
        annotation = eval(annotation, vars(typing) | globals())  # noqa: S307 - local annotations only
    origin = typing.get_origin(annotation)
    if origin is typing.Union or origin is types.UnionType:
        args = [a for a in typing.get_args(annotation) if a is not type(None)]
        if value is None:
            return None
        return _coerce(args[0], value, path)
    if dataclasses.is_dataclass(annotation):
        return _build(annotation, value, path)
    if origin is tuple:
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{path}: expected a sequence")
        item_type = typing.get_args(annotation)[0]
        return tuple(_coerce(item_type, v, path) for v in value)
    if origin is list:
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{path}: expected a sequence")
        item_type = typing.get_args(annotation)[0]
        return [_coerce(item_type, v, f"{path}[]") for v in value]
    if annotation is float and isinstance(value, int):
        return float(value)
    if annotation is int and isinstance(value, float) and value.is_integer():
        return int(value)
    if not isinstance(value, annotation):
        raise ConfigError(f"{path}: expected {annotation.__name__}, got {type(value).__name__}")
    return value


def config_from_dict(data: dict) -> RunConfig:
    cfg = _build(RunConfig, data or {}, "config")
    cfg.validate()
    return cfg


def dataclass_from_dict(cls, data: dict, path: str = "config"):
    """Strictly build any of the config dataclasses from a plain dict."""
    return _build(cls, data, path)


def config_to_dict(cfg) -> dict:
    return dataclasses.asdict(cfg)


def load_config(path: str | Path, apply_env: bool = True) -> RunConfig:
    """Load a YAML config file, then apply OWSED_* environment overrides."""
    raw = yaml.safe_load(Path(path).read_text(encoding="utf-8")) or {}
    if apply_env:
        raw = _apply_env_overrides(raw)
    return config_from_dict(raw)


def save_config(cfg: RunConfig, path: str | Path):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(yaml.safe_dump(config_to_dict(cfg), sort_keys=False), encoding="utf-8")


def _apply_env_overrides(raw: dict) -> dict:
    """OWSED_SECTION__KEY=value overrides; values are parsed as YAML scalars."""
    for name, text in sorted(os.environ.items()):
        if not name.startswith(ENV_PREFIX):
            continue
        dotted = name[len(ENV_PREFIX):].lower().split("__")
        node = raw
        for part in dotted[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"env override {name}: {part} is not a section")
        node[dotted[-1]] = yaml.safe_load(text)
    return raw
