"""Log-mel spectrograms and SpecAugment masking."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.io import wavfile

LOG_FLOOR = 1e-10
_MAGIC = b"AMEL"
_HEADER = struct.Struct("<4sIIdI")  # magic, frames, bins, sample_rate, hop


class FeatureError(ValueError):
    pass


@dataclass(frozen=True)
class MelConfig:
    n_fft: int = 1024
    hop: int = 512
    n_mels: int = 64
    f_min: float = 0.0
    f_max: float | None = None  # Nyquist when None


@dataclass(frozen=True)
class MelSpectrogram:
    values: np.ndarray  # (frames, bins)
    sample_rate: float
    hop: int

    @property
    def shape(self):
        return self.values.shape

    def save(self, path) -> None:
        v = np.ascontiguousarray(self.values, dtype="<f8")
        with open(path, "wb") as fh:
            fh.write(_HEADER.pack(_MAGIC, v.shape[0], v.shape[1], float(self.sample_rate), self.hop))
            fh.write(v.tobytes())

    @classmethod
    def load(cls, path) -> "MelSpectrogram":
        raw = Path(path).read_bytes()
        if len(raw) < _HEADER.size:
            raise FeatureError(f"{path}: truncated spectrogram header")
        magic, frames, bins, sr, hop = _HEADER.unpack_from(raw)
        if magic != _MAGIC:
            raise FeatureError(f"{path}: not a spectrogram file")
        body = raw[_HEADER.size :]
        if len(body) != frames * bins * 8:
            raise FeatureError(f"{path}: expected {frames}x{bins} values")
        values = np.frombuffer(body, dtype="<f8").reshape(frames, bins).astype(np.float64)
        return cls(values, sr, hop)


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(sample_rate: float, n_fft: int = 1024, n_mels: int = 64, f_min: float = 0.0, f_max=None) -> np.ndarray:
    """(n_mels, n_fft // 2 + 1) triangular filters on the HTK mel scale, unit peak height."""
    f_max = sample_rate / 2 if f_max is None else f_max
    bin_freqs = np.arange(n_fft // 2 + 1) * sample_rate / n_fft
    edges = mel_to_hz(np.linspace(hz_to_mel(f_min), hz_to_mel(f_max), n_mels + 2))
    lower, centre, upper = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (bin_freqs - lower) / (centre - lower)
    falling = (upper - bin_freqs) / (upper - centre)
    return np.maximum(0.0, np.minimum(rising, falling))


def filter_centres(sample_rate: float, n_mels: int = 64, f_min: float = 0.0, f_max=None) -> np.ndarray:
    f_max = sample_rate / 2 if f_max is None else f_max
    return mel_to_hz(np.linspace(hz_to_mel(f_min), hz_to_mel(f_max), n_mels + 2))[1:-1]


def hann(n: int) -> np.ndarray:
    """Periodic Hann window."""
    return 0.5 - 0.5 * np.cos(2 * np.pi * np.arange(n) / n)


def dft(frames: np.ndarray) -> np.ndarray:
    """DFT of each row at the non-negative frequencies 0..N/2."""
    return np.fft.rfft(frames, axis=-1)


def power_spectrum(frames: np.ndarray) -> np.ndarray:
    return np.abs(dft(frames)) ** 2


def frame_signal(audio: np.ndarray, n_fft: int, hop: int) -> np.ndarray:
    if len(audio) < n_fft:
        raise FeatureError(f"audio has {len(audio)} samples, need at least one window of {n_fft}")
    n_frames = 1 + (len(audio) - n_fft) // hop
    idx = np.arange(n_fft)[None, :] + hop * np.arange(n_frames)[:, None]
    return audio[idx]


def log_mel(audio: Sequence[float], sample_rate: float, config: MelConfig = MelConfig()) -> MelSpectrogram:
    audio = np.asarray(audio, dtype=np.float64)
    if audio.ndim != 1:
        raise FeatureError("expected mono audio")
    if sample_rate <= 0:
        raise FeatureError("sample_rate must be positive")
    frames = frame_signal(audio, config.n_fft, config.hop) * hann(config.n_fft)
    fb = mel_filterbank(sample_rate, config.n_fft, config.n_mels, config.f_min, config.f_max)
    energies = power_spectrum(frames) @ fb.T
    return MelSpectrogram(np.log(np.maximum(energies, LOG_FLOOR)), float(sample_rate), config.hop)


def read_wav(path) -> tuple[np.ndarray, int]:
    """Mono 16-bit PCM or 32-bit float WAV as float64 samples in [-1, 1]."""
    rate, data = wavfile.read(path)
    if data.ndim != 1:
        raise FeatureError(f"{path}: only mono audio is supported")
    if data.dtype == np.int16:
        return data.astype(np.float64) / 32768.0, rate
    if data.dtype == np.float32:
        return data.astype(np.float64), rate
    raise FeatureError(f"{path}: unsupported sample format {data.dtype}")


# --------------------------------------------------------------------------
# SpecAugment
# --------------------------------------------------------------------------


def apply_masks(values: np.ndarray, freq_bands, time_bands, fill: float) -> np.ndarray:
    """Copy of ``values`` with each (start, width) band set to ``fill``."""
    out = np.array(values, dtype=np.float64, copy=True)
    frames, bins = out.shape
    for start, width in freq_bands:
        if start < 0 or start + width > bins:
            raise FeatureError(f"frequency band [{start}, {start + width}) outside {bins} bins")
        out[:, start : start + width] = fill
    for start, width in time_bands:
        if start < 0 or start + width > frames:
            raise FeatureError(f"time band [{start}, {start + width}) outside {frames} frames")
        out[start : start + width, :] = fill
    return out


def spec_augment(
    mel: MelSpectrogram,
    rng_seed,
    f_masks: int = 2,
    t_masks: int = 2,
    F: int = 8,
    T_max: int | None = None,
) -> MelSpectrogram:
    """Random frequency and time masking filled with the spectrogram mean.

    Widths are drawn uniformly from ``0..F`` and ``0..T_max`` (inclusive);
    ``T_max`` defaults to 10% of the frame count.
    """
    frames, bins = mel.values.shape
    if T_max is None:
        T_max = int(0.1 * frames)
    if not 0 <= F < bins:
        raise FeatureError(f"F={F} must be below the {bins} mel bins")
    if not 0 <= T_max < frames:
        raise FeatureError(f"T_max={T_max} must be below the {frames} frames")
    if f_masks < 0 or t_masks < 0:
        raise FeatureError("mask counts must be non-negative")
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
    freq_bands, time_bands = [], []
    for _ in range(f_masks):
        w = int(rng.integers(0, F + 1))
        freq_bands.append((int(rng.integers(0, bins - w + 1)), w))
    for _ in range(t_masks):
        w = int(rng.integers(0, T_max + 1))
        time_bands.append((int(rng.integers(0, frames - w + 1)), w))
    if not freq_bands and not time_bands:
        return mel
    values = apply_masks(mel.values, freq_bands, time_bands, float(mel.values.mean()))
    return MelSpectrogram(values, mel.sample_rate, mel.hop)
