"""8 kHz log-Mel features, SpecAugment and legacy frame stacking.

Analysis setup: 25 ms Hann-windowed frames every 10 ms (200/80 samples at
8 kHz), 256-point FFT, HTK-scale triangular mel filters over 0-4000 Hz and a
natural log floored at 1e-10.
"""

import math
import struct
import wave
from dataclasses import dataclass

import numpy as np

from eend_lab.errors import ConfigurationError, FormatError, InputError

SAMPLE_RATE = 8000
FRAME_LENGTH = 200
FRAME_SHIFT = 80
N_FFT = 256
LOG_FLOOR = 1e-10
STACK_CONTEXT = 7
SUBSAMPLING = 10

FEAT_MAGIC = b"EENDFEAT"
FEAT_VERSION = 1
_FEAT_HEADER = struct.Struct("<8sIIId")


@dataclass
class Waveform:
    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    @property
    def duration(self):
        return len(self.samples) / self.sample_rate


@dataclass
class FeatureMatrix:
    values: np.ndarray
    frame_shift: float = 0.010

    @property
    def frames(self):
        return self.values.shape[0]

    @property
    def dims(self):
        return self.values.shape[1]


@dataclass
class SpecAugmentConfig:
    n_freq_masks: int = 2
    max_freq_width: int = 2
    n_time_masks: int = 2
    max_time_width: int = 1200
    fill_value: float = 0.0

    def __post_init__(self):
        for name in ("n_freq_masks", "max_freq_width", "n_time_masks", "max_time_width"):
            if getattr(self, name) < 0:
                raise ConfigurationError(f"SpecAugment {name} must be >= 0")


def load_wav(path):
    """Read a PCM16 mono 8 kHz RIFF/WAVE file, scaled by 1/32768."""
    try:
        with wave.open(str(path), "rb") as fh:
            channels = fh.getnchannels()
            width = fh.getsampwidth()
            rate = fh.getframerate()
            raw = fh.readframes(fh.getnframes())
    except (wave.Error, EOFError) as exc:
        raise FormatError(f"{path}: not a PCM RIFF/WAVE file ({exc})") from exc
    if width != 2:
        raise FormatError(f"{path}: sample width is {8 * width} bits, expected 16")
    if channels != 1:
        raise FormatError(f"{path}: {channels} channels, expected mono")
    if rate != SAMPLE_RATE:
        raise FormatError(f"{path}: sample rate {rate} Hz, expected {SAMPLE_RATE}")
    pcm = np.frombuffer(raw, dtype="<i2").astype(np.float64)
    return Waveform(pcm / 32768.0, rate)


def write_wav(path, w):
    """Write as PCM16; samples are rounded to the nearest 1/32768 step and clipped."""
    pcm = np.clip(np.round(np.asarray(w.samples) * 32768.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as fh:
        fh.setnchannels(1)
        fh.setsampwidth(2)
        fh.setframerate(w.sample_rate)
        fh.writeframes(pcm.tobytes())


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_centers(n_mels, fmin=0.0, fmax=SAMPLE_RATE / 2):
    """Center frequencies (Hz) of the triangular filters."""
    edges = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2))
    return edges[1:-1]


def mel_filterbank(n_mels, n_fft=N_FFT, sample_rate=SAMPLE_RATE):
    """(n_mels, n_fft//2 + 1) triangular filters with unit peak."""
    edges = mel_to_hz(np.linspace(hz_to_mel(0.0), hz_to_mel(sample_rate / 2), n_mels + 2))
    bins = np.arange(n_fft // 2 + 1) * sample_rate / n_fft
    lower, center, upper = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (bins - lower) / (center - lower)
    falling = (upper - bins) / (upper - center)
    return np.maximum(0.0, np.minimum(rising, falling))


def _hann(n):
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def frame_count(n_samples):
    return (n_samples - FRAME_LENGTH) // FRAME_SHIFT + 1


def logmel(w, n_mels=23):
    if n_mels not in (23, 80):
        raise ConfigurationError(f"n_mels must be 23 or 80, got {n_mels}")
    if w.sample_rate != SAMPLE_RATE:
        raise InputError(f"sample rate {w.sample_rate} Hz, expected {SAMPLE_RATE}")
    x = np.asarray(w.samples, dtype=np.float64)
    if len(x) < FRAME_LENGTH:
        raise InputError(f"waveform has {len(x)} samples, shorter than one frame")
    n = frame_count(len(x))
    idx = np.arange(FRAME_LENGTH)[None, :] + FRAME_SHIFT * np.arange(n)[:, None]
    frames = x[idx] * _hann(FRAME_LENGTH)
    spec = np.fft.rfft(frames, n=N_FFT, axis=1)
    power = spec.real ** 2 + spec.imag ** 2
    energies = power @ mel_filterbank(n_mels).T
    return FeatureMatrix(np.log(np.maximum(energies, LOG_FLOOR)), 0.010)


def spec_augment(f, cfg, rng):
    """Zero out random frequency bands, then random time spans.

    Draw order per mask: width ~ U{0..max}, then start ~ U{0..dims-width}.
    All frequency masks are drawn before any time mask.
    """
    values = np.array(f.values, dtype=np.float64, copy=True)
    n_t, n_f = values.shape
    for _ in range(cfg.n_freq_masks):
        width = rng.randint(0, min(cfg.max_freq_width, n_f))
        start = rng.randint(0, n_f - width)
        values[:, start:start + width] = cfg.fill_value
    for _ in range(cfg.n_time_masks):
        width = rng.randint(0, min(cfg.max_time_width, n_t))
        start = rng.randint(0, n_t - width)
        values[start:start + width, :] = cfg.fill_value
    return FeatureMatrix(values, f.frame_shift)


def stack_and_decimate(f, context=STACK_CONTEXT, factor=SUBSAMPLING):
    """Concatenate +-context neighbours (edge frames replicated), keep every factor-th frame."""
    values = np.asarray(f.values, dtype=np.float64)
    n_t = values.shape[0]
    centers = np.arange(0, n_t, factor)
    offsets = np.arange(-context, context + 1)
    idx = np.clip(centers[:, None] + offsets[None, :], 0, n_t - 1)
    stacked = values[idx].reshape(len(centers), -1)
    return FeatureMatrix(stacked, f.frame_shift * factor)


def write_features(path, f):
    values = np.asarray(f.values)
    header = _FEAT_HEADER.pack(FEAT_MAGIC, FEAT_VERSION, values.shape[0], values.shape[1],
                               float(f.frame_shift))
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(values.astype("<f4").tobytes())


def read_features(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < _FEAT_HEADER.size:
        raise FormatError(f"{path}: truncated feature header")
    magic, version, n_t, n_f, shift = _FEAT_HEADER.unpack_from(blob)
    if magic != FEAT_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != FEAT_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    payload = blob[_FEAT_HEADER.size:]
    if len(payload) != 4 * n_t * n_f:
        raise FormatError(f"{path}: payload has {len(payload)} bytes, expected {4 * n_t * n_f}")
    values = np.frombuffer(payload, dtype="<f4").astype(np.float64).reshape(n_t, n_f)
    if not math.isfinite(shift) or shift <= 0:
        raise FormatError(f"{path}: bad frame shift {shift}")
    return FeatureMatrix(values, shift)
