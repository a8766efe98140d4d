"""Bundled synthetic utterance pool: harmonic "voices" with syllable-rate envelopes.

No external corpora are needed for smoke runs and tests. Each speaker has a
distinct fundamental frequency and spectral tilt so a small model can tell
them apart from log-Mel features.
"""

import math

import numpy as np

from eend_lab.features import SAMPLE_RATE, Waveform
from eend_lab.numerics.rng import Rng

VOICES = (
    {"f0": 110.0, "tilt": 1.0, "formant": 700.0},
    {"f0": 220.0, "tilt": 0.6, "formant": 1600.0},
    {"f0": 330.0, "tilt": 1.4, "formant": 2600.0},
)


def synth_utterance(voice, duration, rng, level=0.1):
    n = int(round(duration * SAMPLE_RATE))
    t = np.arange(n) / SAMPLE_RATE
    vibrato = 1.0 + 0.02 * np.sin(2 * math.pi * rng.uniform(4.0, 6.0) * t)
    phase = 2 * math.pi * voice["f0"] * np.cumsum(vibrato) / SAMPLE_RATE
    signal = np.zeros(n)
    for h in range(1, 12):
        freq = h * voice["f0"]
        if freq >= SAMPLE_RATE / 2:
            break
        gain = h ** -voice["tilt"] * (1.0 + 2.0 * math.exp(-((freq - voice["formant"]) / 300.0) ** 2))
        signal += gain * np.sin(h * phase + rng.uniform(0, 2 * math.pi))
    syllables = 0.6 + 0.4 * np.sin(2 * math.pi * rng.uniform(3.0, 5.0) * t + rng.uniform(0, 6.28))
    ramp = np.minimum(1.0, np.minimum(t, t[::-1]) / 0.02)
    signal *= syllables * ramp
    signal *= level / max(np.sqrt(np.mean(signal ** 2)), 1e-12)
    signal += 0.002 * level * rng.normal_array(n)
    return signal


def synthetic_pool_waveforms(seed=0, n_speakers=3, seconds_per_speaker=10.0,
                             min_dur=0.6, max_dur=2.5):
    """``{speaker: [samples, ...]}`` with about ``seconds_per_speaker`` of audio each."""
    rng = Rng(seed)
    pool = {}
    for k in range(n_speakers):
        voice = VOICES[k % len(VOICES)]
        spk_rng = rng.spawn(k)
        utts, total = [], 0.0
        while total < seconds_per_speaker:
            dur = min(spk_rng.uniform(min_dur, max_dur), seconds_per_speaker - total)
            dur = max(dur, 0.2)
            utts.append(synth_utterance(voice, dur, spk_rng))
            total += dur
        pool[f"synth{k}"] = utts
    return pool


def synthetic_noise(seed=0, seconds=2.0):
    rng = Rng(seed)
    return Waveform(0.05 * rng.normal_array(int(seconds * SAMPLE_RATE)))


def synthetic_rir(seed=0, seconds=0.05, decay=0.01):
    """Exponentially decaying noise tail with a unit direct path."""
    rng = Rng(seed)
    n = int(seconds * SAMPLE_RATE)
    t = np.arange(n) / SAMPLE_RATE
    rir = 0.3 * rng.normal_array(n) * np.exp(-t / decay)
    rir[0] = 1.0
    return rir
