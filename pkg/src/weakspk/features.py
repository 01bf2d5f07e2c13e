"""Waveform ingestion, log mel filterbank / MFCC features and per-segment normalization.

Conventions: pre-emphasis 0.97, Hamming window, FFT size = next power of two
>= window length, mel(f) = 2595 log10(1 + f/700), triangular filters spanning
0 Hz to Nyquist, orthonormal DCT-II for cepstra.
"""

from __future__ import annotations

import wave
from dataclasses import dataclass, replace

import numpy as np
from scipy.fft import dct

from .errors import ConfigError, UnsupportedFormatError

SAMPLE_RATE = 16000
LOG_FLOOR = 1e-10
PREEMPHASIS = 0.97
VAR_FLOOR = 1e-8


@dataclass
class Waveform:
    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    @property
    def duration(self):
        return len(self.samples) / self.sample_rate


@dataclass
class FeatureMatrix:
    frames: np.ndarray
    frame_shift_ms: float = 10.0
    feature_kind: str = "synthetic"

    @property
    def num_frames(self):
        return self.frames.shape[0]


def read_wav(path) -> Waveform:
    try:
        with wave.open(str(path), "rb") as wf:
            channels = wf.getnchannels()
            width = wf.getsampwidth()
            rate = wf.getframerate()
            comp = wf.getcomptype()
            payload = wf.readframes(wf.getnframes())
    except wave.Error as exc:
        raise UnsupportedFormatError("encoding", str(exc)) from exc
    if comp != "NONE":
        raise UnsupportedFormatError("encoding", f"compression {comp!r}")
    if channels != 1:
        raise UnsupportedFormatError("channels", f"{channels} channels, expected mono")
    if width != 2:
        raise UnsupportedFormatError("sample_width", f"{8 * width}-bit samples, expected 16-bit PCM")
    if rate != SAMPLE_RATE:
        raise UnsupportedFormatError("sample_rate", f"{rate} Hz, expected {SAMPLE_RATE} Hz")
    samples = np.frombuffer(payload, dtype="<i2").astype(np.float64) / 32768.0
    return Waveform(samples, rate)


def write_wav(path, waveform: Waveform):
    pcm = np.clip(np.round(waveform.samples * 32768.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(2)
        wf.setframerate(waveform.sample_rate)
        wf.writeframes(pcm.tobytes())


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(n_mels, n_fft, sample_rate=SAMPLE_RATE):
    """``(n_mels, n_fft//2 + 1)`` triangular weights and the filter center frequencies."""
    edges = mel_to_hz(np.linspace(0.0, hz_to_mel(sample_rate / 2.0), n_mels + 2))
    freqs = np.arange(n_fft // 2 + 1) * sample_rate / n_fft
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    up = (freqs - lo) / (mid - lo)
    down = (hi - freqs) / (hi - mid)
    return np.maximum(0.0, np.minimum(up, down)), edges[1:-1]


def _frame_params(win_ms, hop_ms, sample_rate):
    win = int(round(win_ms * sample_rate / 1000))
    hop = int(round(hop_ms * sample_rate / 1000))
    n_fft = 1 << (win - 1).bit_length()
    return win, hop, n_fft


def power_spectrum(waveform: Waveform, win_ms=25.0, hop_ms=10.0):
    win, hop, n_fft = _frame_params(win_ms, hop_ms, waveform.sample_rate)
    x = np.asarray(waveform.samples, dtype=np.float64)
    if len(x) < win:
        raise ValueError(f"waveform has {len(x)} samples, shorter than one {win}-sample window")
    x = np.concatenate([x[:1], x[1:] - PREEMPHASIS * x[:-1]])
    frames = np.lib.stride_tricks.sliding_window_view(x, win)[::hop]
    frames = frames * np.hamming(win)
    return np.abs(np.fft.rfft(frames, n=n_fft, axis=1)) ** 2


def log_mel(waveform: Waveform, n_mels=80, win_ms=25.0, hop_ms=10.0):
    _, _, n_fft = _frame_params(win_ms, hop_ms, waveform.sample_rate)
    fb, _ = mel_filterbank(n_mels, n_fft, waveform.sample_rate)
    energy = power_spectrum(waveform, win_ms, hop_ms) @ fb.T
    return np.log(np.maximum(energy, LOG_FLOOR))


def fbank(waveform: Waveform, n_mels=80, win_ms=25.0, hop_ms=10.0) -> FeatureMatrix:
    return FeatureMatrix(log_mel(waveform, n_mels, win_ms, hop_ms), hop_ms, "fbank")


def cepstra(log_mel_energies, n_ceps):
    if n_ceps > log_mel_energies.shape[-1]:
        raise ConfigError(f"n_ceps={n_ceps} exceeds the number of mel bands")
    return dct(log_mel_energies, type=2, norm="ortho", axis=-1)[..., :n_ceps]


def mfcc(waveform: Waveform, n_ceps=20, n_mels=40, win_ms=25.0, hop_ms=10.0) -> FeatureMatrix:
    if n_ceps > n_mels:
        raise ConfigError(f"n_ceps={n_ceps} exceeds n_mels={n_mels}")
    return FeatureMatrix(cepstra(log_mel(waveform, n_mels, win_ms, hop_ms), n_ceps), hop_ms, "mfcc")


def instance_normalize(features):
    """Zero mean, unit variance per feature dimension over the time axis.

    Accepts ``(T, F)``, batched ``(N, T, F)`` arrays or a :class:`FeatureMatrix`.
    """
    if isinstance(features, FeatureMatrix):
        return replace(features, frames=instance_normalize(features.frames))
    x = np.asarray(features, dtype=np.float64)
    mean = x.mean(axis=-2, keepdims=True)
    centered = x - mean
    var = np.mean(centered * centered, axis=-2, keepdims=True)
    return centered / np.sqrt(np.maximum(var, VAR_FLOOR))
