"""Log-mel front end and the feature-sequence container fed to the detector.

Frame convention: the signal is center-padded by n_fft // 2 on both
sides, so frame t is centered at sample t * hop and the frame count for
n samples is floor(n / hop) + 1.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import gcd
from pathlib import Path

import numpy as np
import scipy.io.wavfile
import scipy.signal
import torch

from ..config import MelConfig
from ..errors import DataError


@dataclass
class FeatureSequence:
    """Temporal feature matrix (T, D) produced by the backbone."""

    values: torch.Tensor
    frame_rate: float  # frames per second along T
    clip_id: str = ""

    def __post_init__(self):
        if self.values.ndim != 2 or self.values.shape[0] < 1 or self.values.shape[1] < 1:
            raise DataError(f"feature sequence must be (T>=1, D>=1), got {tuple(self.values.shape)}")
        if not torch.isfinite(self.values).all():
            raise DataError(f"feature sequence for {self.clip_id!r} contains non-finite values")


def hz_to_mel(hz):
    return 2595.0 * np.log10(1.0 + np.asarray(hz, dtype=np.float64) / 700.0)


def mel_to_hz(mel):
    return 700.0 * (10.0 ** (np.asarray(mel, dtype=np.float64) / 2595.0) - 1.0)


def mel_center_frequencies(config: MelConfig) -> np.ndarray:
    """Center frequency (Hz) of each triangular mel band."""
    f_max = config.f_max if config.f_max is not None else config.sample_rate / 2
    mels = np.linspace(hz_to_mel(config.f_min), hz_to_mel(f_max), config.n_mels + 2)
    return mel_to_hz(mels)[1:-1]


def mel_filterbank(config: MelConfig) -> np.ndarray:
    """Triangular filters, shape (n_mels, n_fft // 2 + 1)."""
    f_max = config.f_max if config.f_max is not None else config.sample_rate / 2
    n_bins = config.n_fft // 2 + 1
    fft_freqs = np.linspace(0.0, config.sample_rate / 2, n_bins)
    mel_points = mel_to_hz(np.linspace(hz_to_mel(config.f_min), hz_to_mel(f_max), config.n_mels + 2))

    bank = np.zeros((config.n_mels, n_bins))
    for m in range(config.n_mels):
        lo, center, hi = mel_points[m], mel_points[m + 1], mel_points[m + 2]
        rising = (fft_freqs - lo) / max(center - lo, 1e-12)
        falling = (hi - fft_freqs) / max(hi - center, 1e-12)
        bank[m] = np.clip(np.minimum(rising, falling), 0.0, None)
    return bank


def num_frames(n_samples: int, config: MelConfig) -> int:
    return n_samples // config.hop_length + 1


def compute_mel(waveform: np.ndarray, sample_rate: int, config: MelConfig) -> np.ndarray:
    """Log-compressed mel power, shape (1, T0, F0) float32.

    Resamples to config.sample_rate when needed; compression is
    log(1 + power * compression_scale) so silence maps to a constant 0
    floor.
    """
    waveform = np.asarray(waveform, dtype=np.float64).reshape(-1)
    if waveform.size == 0:
        raise DataError("cannot compute features of an empty waveform")
    if sample_rate != config.sample_rate:
        waveform = resample(waveform, sample_rate, config.sample_rate)

    power = _stft_power(waveform, config)  # (T0, n_bins)
    mel_power = power @ mel_filterbank(config).T  # (T0, n_mels)
    feats = np.log1p(mel_power * config.compression_scale)
    return feats[np.newaxis].astype(np.float32)


def resample(waveform: np.ndarray, sr_from: int, sr_to: int) -> np.ndarray:
    g = gcd(sr_from, sr_to)
    return scipy.signal.resample_poly(waveform, sr_to // g, sr_from // g)


def load_waveform(path: str | Path) -> tuple[np.ndarray, int]:
    """Read a PCM WAV (16/32-bit int, 8-bit, or float), mixed down to mono in [-1, 1]."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"audio file not found: {path}")
    sample_rate, data = scipy.io.wavfile.read(path)
    data = np.asarray(data)
    if data.ndim == 2:
        data = data.mean(axis=1)
    if data.dtype == np.int16:
        data = data / 32768.0
    elif data.dtype == np.int32:
        data = data / 2147483648.0
    elif data.dtype == np.uint8:
        data = (data.astype(np.float64) - 128.0) / 128.0
    return data.astype(np.float64), int(sample_rate)


def save_waveform(path: str | Path, waveform: np.ndarray, sample_rate: int):
    """Write 16-bit PCM; input is float in [-1, 1] and is clipped, not wrapped."""
    clipped = np.clip(np.asarray(waveform, dtype=np.float64), -1.0, 1.0)
    scipy.io.wavfile.write(path, sample_rate, np.round(clipped * 32767.0).astype(np.int16))


def _stft_power(waveform: np.ndarray, config: MelConfig) -> np.ndarray:
    pad = config.n_fft // 2
    if waveform.size > pad:
        padded = np.pad(waveform, pad, mode="reflect")
    else:
        padded = np.pad(waveform, pad, mode="constant")

    window = scipy.signal.get_window("hann", config.win_length, fftbins=True)
    if config.win_length < config.n_fft:
        lpad = (config.n_fft - config.win_length) // 2
        window = np.pad(window, (lpad, config.n_fft - config.win_length - lpad))

    n_frames = num_frames(waveform.size, config)
    frames = np.lib.stride_tricks.sliding_window_view(padded, config.n_fft)[:: config.hop_length]
    frames = frames[:n_frames]
    spectrum = np.fft.rfft(frames * window, n=config.n_fft, axis=1)
    return np.abs(spectrum) ** 2
