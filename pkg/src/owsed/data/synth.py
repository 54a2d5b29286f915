"""Synthetic polyphonic audio with exactly annotated onsets and offsets.

Each class is a distinct parametric sound (tone, linear chirp, or
band-limited noise burst) so classes are acoustically separable by
construction. Event times are quantized to a 1 ms grid, which makes the
written annotation TSV round-trip byte-exactly.

Every clip carries at least one event: the per-clip event count follows
a zero-truncated Poisson law with the configured mean.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
import scipy.signal

from ..config import SynthClassConfig, SynthConfig
from ..errors import ValidationError
from .annotations import (ClipAnnotation, EventLabel, save_annotations,
                          save_task_map, save_vocabulary)
from .mel import save_waveform

RAMP_SECONDS = 0.02
MAX_PLACEMENT_TRIES = 50


def synth_vocabulary(config: SynthConfig) -> dict[str, int]:
    return {cls.label: i + 1 for i, cls in enumerate(config.classes)}


def synth_task_map(config: SynthConfig) -> dict[int, int]:
    class_to_task = {}
    class_id = 1
    for task_idx, count in enumerate(config.classes_per_task, start=1):
        for _ in range(count):
            class_to_task[class_id] = task_idx
            class_id += 1
    return class_to_task


def synth_generate(config: SynthConfig, seed: int, n_clips: int | None = None,
                   prefix: str = "clip") -> tuple[list[ClipAnnotation], dict[str, np.ndarray]]:
    """Generate `n_clips` annotated clips; pure in (config, seed, n_clips, prefix)."""
    config.validate()
    if n_clips is None:
        n_clips = config.n_train_clips
    rng = np.random.default_rng(seed)
    sr = config.sample_rate
    n_samples = int(round(config.clip_duration * sr))

    clips: list[ClipAnnotation] = []
    waveforms: dict[str, np.ndarray] = {}
    for i in range(n_clips):
        clip_id = f"{prefix}_{i:05d}.wav"
        events = _place_events(config, rng)
        wave = rng.normal(0.0, config.noise_level, n_samples)
        for ev, amplitude in events:
            start = int(round(ev.onset * sr))
            stop = int(round(ev.offset * sr))
            wave[start:stop] += amplitude * _render(config.classes[ev.class_id - 1],
                                                    stop - start, sr, rng)
        clips.append(ClipAnnotation(clip_id, config.clip_duration, [ev for ev, _ in events]))
        waveforms[clip_id] = wave
    return clips, waveforms


def _place_events(config: SynthConfig, rng: np.random.Generator):
    n_events = 0
    while n_events == 0:
        n_events = rng.poisson(config.events_per_clip_mean)

    placed: list[tuple[EventLabel, float]] = []
    for _ in range(n_events):
        class_id = int(rng.integers(1, len(config.classes) + 1))
        duration = _quantize(rng.uniform(config.min_event_duration, config.max_event_duration))
        amplitude = rng.uniform(config.min_amplitude, config.max_amplitude)
        may_overlap = rng.random() < config.overlap_probability

        latest = config.clip_duration - duration
        for _ in range(MAX_PLACEMENT_TRIES):
            onset = _quantize(rng.uniform(0.0, latest))
            offset = _quantize(onset + duration)
            if may_overlap or not _intersects(onset, offset, [e for e, _ in placed]):
                placed.append((EventLabel(class_id, onset, offset), amplitude))
                break
        # crowded clip with overlaps forbidden: the event is dropped
    placed.sort(key=lambda ea: (ea[0].onset, ea[0].class_id))
    return placed


def _intersects(onset, offset, events):
    return any(onset < ev.offset and ev.onset < offset for ev in events)


def _quantize(seconds: float) -> float:
    return round(seconds * 1000.0) / 1000.0


def _render(cls: SynthClassConfig, n_samples: int, sr: int, rng: np.random.Generator) -> np.ndarray:
    t = np.arange(n_samples) / sr
    if cls.kind == "tone":
        signal = np.sin(2.0 * np.pi * cls.freq * t)
    elif cls.kind == "chirp":
        f1 = cls.freq_end if cls.freq_end is not None else 2.0 * cls.freq
        signal = scipy.signal.chirp(t, f0=cls.freq, t1=max(t[-1], 1e-6), f1=f1, method="linear")
    elif cls.kind == "noise_band":
        lo = max(cls.freq - cls.bandwidth / 2, 1.0)
        hi = min(cls.freq + cls.bandwidth / 2, sr / 2 - 1.0)
        sos = scipy.signal.butter(4, [lo, hi], btype="bandpass", fs=sr, output="sos")
        noise = rng.normal(0.0, 1.0, n_samples)
        signal = scipy.signal.sosfiltfilt(sos, noise)
        peak = np.max(np.abs(signal))
        if peak > 0:
            signal = signal / peak
    else:
        raise ValidationError(f"unknown sound kind {cls.kind!r}")
    return signal * _ramp_envelope(n_samples, sr)


def _ramp_envelope(n_samples: int, sr: int) -> np.ndarray:
    ramp = min(int(RAMP_SECONDS * sr), n_samples // 4)
    env = np.ones(n_samples)
    if ramp > 0:
        shape = 0.5 * (1.0 - np.cos(np.pi * np.arange(ramp) / ramp))
        env[:ramp] = shape
        env[-ramp:] = shape[::-1]
    return env


def write_dataset(config: SynthConfig, seed: int, out_dir: str | Path) -> dict[str, Path]:
    """Materialize train and eval splits plus vocabulary and task map.

    The eval split uses an independent stream (seed + 1) so train and
    eval clips differ while the whole dataset stays pure in `seed`.
    """
    out_dir = Path(out_dir)
    audio_dir = out_dir / "audio"
    audio_dir.mkdir(parents=True, exist_ok=True)

    vocab = synth_vocabulary(config)
    paths = {
        "train_annotations": out_dir / "train.tsv",
        "eval_annotations": out_dir / "eval.tsv",
        "vocabulary": out_dir / "vocab.tsv",
        "task_map": out_dir / "task_map.tsv",
        "audio_dir": audio_dir,
    }

    for split, n_clips, split_seed in (("train", config.n_train_clips, seed),
                                       ("eval", config.n_eval_clips, seed + 1)):
        clips, waveforms = synth_generate(config, split_seed, n_clips, prefix=split)
        for clip in clips:
            save_waveform(audio_dir / clip.clip_id, waveforms[clip.clip_id], config.sample_rate)
        save_annotations(clips, paths[f"{split}_annotations"], vocab)

    save_vocabulary(vocab, paths["vocabulary"])
    save_task_map(synth_task_map(config), vocab, paths["task_map"])
    return paths
