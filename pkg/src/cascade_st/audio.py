"""Acoustic front end: 80-dim log-mel filterbanks, deltas, per-segment CMVN.

Conventions (documented so every oracle is reproducible):
  * pre-emphasis 0.97 with the first sample replicated
  * 25 ms Hann-windowed frames every 10 ms (symmetric window)
  * power spectrum via an iterative radix-2 FFT, frames zero-padded to the
    next power of two
  * triangular mel filters on the HTK scale mel(f) = 2595*log10(1 + f/700),
    spanning 0 Hz to Nyquist
  * natural-log compression with floor 1e-10
  * regression deltas with window 2 and edge replication, stacked as
    [static | delta | delta-delta]
  * CMVN per segment and per dimension, variance floor 1e-8
"""

from __future__ import annotations

import struct
import wave
from dataclasses import dataclass
from pathlib import Path

import numpy as np

LOG_FLOOR = 1e-10
VAR_FLOOR = 1e-8


class AudioError(ValueError):
    pass


@dataclass
class Waveform:
    samples: np.ndarray  # float64, mono
    sample_rate: int = 16000

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.size == 0:
            raise AudioError("empty waveform")
        if not np.all(np.isfinite(self.samples)):
            raise AudioError("waveform contains non-finite samples")


@dataclass
class FeatureMatrix:
    frames: np.ndarray  # (T, D)
    frame_shift: float
    descriptor: str  # "mel80" family, "+deltas", "+cmvn" suffixes

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def dim(self) -> int:
        return self.frames.shape[1]


# ---------------------------------------------------------------------------
# FFT (iterative radix-2, vectorized over a batch of frames)


def _bit_reverse_permutation(n: int) -> np.ndarray:
    bits = n.bit_length() - 1
    idx = np.arange(n)
    rev = np.zeros(n, dtype=np.int64)
    for _ in range(bits):
        rev = (rev << 1) | (idx & 1)
        idx >>= 1
    return rev


def fft(x: np.ndarray) -> np.ndarray:
    """Radix-2 decimation-in-time FFT along the last axis (length must be 2**k)."""
    x = np.asarray(x, dtype=np.complex128)
    n = x.shape[-1]
    if n & (n - 1) or n == 0:
        raise AudioError(f"fft length {n} is not a power of two")
    out = x[..., _bit_reverse_permutation(n)].copy()
    half = 1
    while half < n:
        step = half * 2
        twiddle = np.exp(-2j * np.pi * np.arange(half) / step)
        blocks = out.reshape(*out.shape[:-1], n // step, step)
        even = blocks[..., :half].copy()  # copy: the butterfly writes over this slice
        odd = blocks[..., half:] * twiddle
        blocks[..., :half] = even + odd
        blocks[..., half:] = even - odd
        half = step
    return out


def ifft(x: np.ndarray) -> np.ndarray:
    """Inverse of :func:`fft` (conjugation trick)."""
    n = np.asarray(x).shape[-1]
    return np.conj(fft(np.conj(x))) / n


def next_power_of_two(n: int) -> int:
    return 1 if n <= 1 else 1 << (n - 1).bit_length()


# ---------------------------------------------------------------------------
# mel filterbank


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(n_mels: int, n_fft: int, sample_rate: int) -> np.ndarray:
    """Triangular filters (n_mels, n_fft//2+1) from 0 Hz to Nyquist, HTK scale."""
    nyquist = sample_rate / 2.0
    mel_points = np.linspace(hz_to_mel(0.0), hz_to_mel(nyquist), n_mels + 2)
    hz_points = mel_to_hz(mel_points)
    bin_freqs = np.arange(n_fft // 2 + 1) * sample_rate / n_fft
    fb = np.zeros((n_mels, n_fft // 2 + 1))
    for m in range(n_mels):
        lo, center, hi = hz_points[m], hz_points[m + 1], hz_points[m + 2]
        up = (bin_freqs - lo) / (center - lo)
        down = (hi - bin_freqs) / (hi - center)
        fb[m] = np.clip(np.minimum(up, down), 0.0, None)
    return fb


def filter_center_hz(n_mels: int, sample_rate: int, k: int) -> float:
    """Center frequency of mel filter k (for synthesizing probe tones)."""
    nyquist = sample_rate / 2.0
    mel_points = np.linspace(hz_to_mel(0.0), hz_to_mel(nyquist), n_mels + 2)
    return float(mel_to_hz(mel_points[k + 1]))


# ---------------------------------------------------------------------------
# feature pipeline


def mel_spectrogram(wave_in: Waveform, n_mels: int = 80,
                    frame_length: float = 0.025, frame_shift: float = 0.010,
                    preemphasis: float = 0.97) -> FeatureMatrix:
    """Log-mel filterbank energies, one row per frame."""
    sr = wave_in.sample_rate
    frame_len = int(round(frame_length * sr))
    shift = int(round(frame_shift * sr))
    x = wave_in.samples
    if x.size < frame_len:
        raise AudioError(f"waveform of {x.size} samples shorter than one frame ({frame_len})")

    emphasized = np.empty_like(x)
    emphasized[0] = x[0] - preemphasis * x[0]
    emphasized[1:] = x[1:] - preemphasis * x[:-1]

    num_frames = 1 + (x.size - frame_len) // shift
    starts = np.arange(num_frames) * shift
    frames = emphasized[starts[:, None] + np.arange(frame_len)[None, :]]

    window = np.hanning(frame_len)
    n_fft = next_power_of_two(frame_len)
    padded = np.zeros((num_frames, n_fft))
    padded[:, :frame_len] = frames * window

    spectrum = fft(padded)[:, : n_fft // 2 + 1]
    power = (spectrum.real ** 2 + spectrum.imag ** 2)
    fb = mel_filterbank(n_mels, n_fft, sr)
    mel = power @ fb.T
    logmel = np.log(np.maximum(mel, LOG_FLOOR))
    return FeatureMatrix(frames=logmel, frame_shift=frame_shift, descriptor=f"mel{n_mels}")


def add_deltas(features: FeatureMatrix, window: int = 2) -> FeatureMatrix:
    """Stack [static | delta | delta-delta] computed by the regression formula

        d_t = sum_{n=1..w} n * (x_{t+n} - x_{t-n}) / (2 * sum n^2)

    with frame replication at the edges, tripling the feature width.
    """
    x = features.frames
    if x.shape[0] < 1:
        raise AudioError("add_deltas: need at least one frame")
    d1 = _regression_delta(x, window)
    d2 = _regression_delta(d1, window)
    stacked = np.concatenate([x, d1, d2], axis=1)
    return FeatureMatrix(frames=stacked, frame_shift=features.frame_shift,
                         descriptor=features.descriptor + "+deltas")


def _regression_delta(x: np.ndarray, window: int) -> np.ndarray:
    t = x.shape[0]
    denom = 2.0 * sum(n * n for n in range(1, window + 1))
    out = np.zeros_like(x)
    idx = np.arange(t)
    for n in range(1, window + 1):
        fwd = np.clip(idx + n, 0, t - 1)
        back = np.clip(idx - n, 0, t - 1)
        out += n * (x[fwd] - x[back])
    return out / denom


def cmvn(features: FeatureMatrix) -> FeatureMatrix:
    """Per-dimension zero mean / unit variance over the segment.

    Constant dimensions map to exactly zero via the variance floor.
    """
    x = features.frames
    mean = x.mean(axis=0, keepdims=True)
    var = x.var(axis=0, keepdims=True)
    out = (x - mean) / np.sqrt(np.maximum(var, VAR_FLOOR))
    desc = features.descriptor
    if not desc.endswith("+cmvn"):
        desc = desc + "+cmvn"
    return FeatureMatrix(frames=out, frame_shift=features.frame_shift, descriptor=desc)


def extract_features(wave_in: Waveform, n_mels: int = 80) -> FeatureMatrix:
    """Full pipeline: log-mel -> deltas -> per-segment CMVN (D = 3 * n_mels)."""
    return cmvn(add_deltas(mel_spectrogram(wave_in, n_mels=n_mels)))


# ---------------------------------------------------------------------------
# WAV I/O (mono 16-bit PCM RIFF)


def read_wav(path: str | Path) -> Waveform:
    with wave.open(str(path), "rb") as f:
        if f.getnchannels() != 1:
            raise AudioError(f"{path}: expected mono audio")
        if f.getsampwidth() != 2:
            raise AudioError(f"{path}: expected 16-bit PCM")
        raw = f.readframes(f.getnframes())
        sr = f.getframerate()
    samples = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    return Waveform(samples=samples, sample_rate=sr)


def write_wav(path: str | Path, wave_out: Waveform) -> None:
    clipped = np.clip(wave_out.samples, -1.0, 1.0)
    pcm = np.round(clipped * 32767.0).astype("<i2")
    with wave.open(str(path), "wb") as f:
        f.setnchannels(1)
        f.setsampwidth(2)
        f.setframerate(wave_out.sample_rate)
        f.writeframes(pcm.tobytes())


# ---------------------------------------------------------------------------
# binary feature cache
#
# Layout (little-endian): int32 T, int32 D, then T*D row-major float32 values.
# The frame shift is not stored; cached features assume the 10 ms default.


def save_features(features: FeatureMatrix, path: str | Path) -> None:
    t, d = features.frames.shape
    with open(path, "wb") as f:
        f.write(struct.pack("<ii", t, d))
        f.write(features.frames.astype("<f4").tobytes())


def load_features(path: str | Path) -> FeatureMatrix:
    with open(path, "rb") as f:
        header = f.read(8)
        if len(header) != 8:
            raise AudioError(f"{path}: truncated feature file")
        t, d = struct.unpack("<ii", header)
        if t <= 0 or d <= 0:
            raise AudioError(f"{path}: implausible feature header T={t} D={d}")
        payload = f.read(t * d * 4)
        if len(payload) != t * d * 4:
            raise AudioError(f"{path}: truncated feature payload")
        data = np.frombuffer(payload, dtype="<f4").reshape(t, d)
    return FeatureMatrix(frames=data.astype(np.float64), frame_shift=0.010,
                         descriptor=f"cached{d}")
