"""Two-speaker conversation mixtures from utterance pools.

Each speaker's track is built independently: starting from t=0, every
utterance follows an exponentially distributed silence gap after the
previous utterance of the same speaker. Tracks are summed sample-wise, so
overlap comes from the two tracks running concurrently.
"""

import logging
import math
from dataclasses import asdict, dataclass, field, fields

import numpy as np
from scipy.signal import convolve

from eend_lab.annotation import Annotation, Segment, activity_profile
from eend_lab.errors import ConfigurationError, InputError, ParseError
from eend_lab.features import SAMPLE_RATE, Waveform, load_wav
from eend_lab.numerics.rng import Rng

log = logging.getLogger(__name__)

MAX_SAMPLE = 1.0 - 1.0 / 32768


@dataclass
class Utterance:
    speaker: str
    path: str | None
    duration: float
    samples: np.ndarray | None = None

    def load(self):
        if self.samples is None:
            self.samples = load_wav(self.path).samples
        return self.samples


@dataclass
class UtterancePool:
    speakers: dict
    manifest: str | None = None

    @property
    def size(self):
        return sum(len(u) for u in self.speakers.values())

    @property
    def speaker_ids(self):
        return sorted(self.speakers)


@dataclass
class SimConfig:
    n_speakers: int = 2
    n_utts_min: int = 10
    n_utts_max: int = 20
    gap_mean_beta: float = 1.4
    min_utt_len: float = 0.0
    snr_db: tuple = (10.0, 15.0, 20.0)
    use_noise: bool = False
    use_rir: bool = False
    rir_mode: str = "mixture"  # or "per_speaker"
    n_mixtures: int = 100
    seed: int = 0

    def __post_init__(self):
        self.snr_db = tuple(float(s) for s in self.snr_db)
        if self.n_speakers != 2:
            raise ConfigurationError("only two-speaker mixtures are supported")
        if not 1 <= self.n_utts_min <= self.n_utts_max:
            raise ConfigurationError("need 1 <= n_utts_min <= n_utts_max")
        if not self.gap_mean_beta > 0:
            raise ConfigurationError("gap_mean_beta must be > 0")
        if self.min_utt_len < 0:
            raise ConfigurationError("min_utt_len must be >= 0")
        if self.use_noise and not self.snr_db:
            raise ConfigurationError("use_noise needs at least one snr_db value")
        if self.n_mixtures < 0:
            raise ConfigurationError("n_mixtures must be >= 0")
        if self.rir_mode not in ("mixture", "per_speaker"):
            raise ConfigurationError(f"rir_mode must be mixture or per_speaker, got {self.rir_mode!r}")

    def to_dict(self):
        d = asdict(self)
        d["snr_db"] = list(self.snr_db)
        return d

    @classmethod
    def from_dict(cls, data):
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigurationError(f"unknown sim config keys: {sorted(unknown)}")
        return cls(**data)


def build_pool(manifest_path, min_utt_len=0.0):
    """Read a ``speaker<TAB>wav<TAB>duration`` manifest, dropping short utterances."""
    speakers = {}
    try:
        with open(manifest_path, encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise InputError(f"cannot read manifest {manifest_path}: {exc}") from exc
    for lineno, line in enumerate(lines, start=1):
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise ParseError(f"{manifest_path}: expected 3 tab-separated fields", lineno)
        spk, path, dur_text = parts
        try:
            dur = float(dur_text)
        except ValueError as exc:
            raise ParseError(f"{manifest_path}: bad duration {dur_text!r}", lineno) from exc
        if not math.isfinite(dur) or dur < 0:
            raise ParseError(f"{manifest_path}: bad duration {dur_text!r}", lineno)
        if dur < min_utt_len:
            continue
        speakers.setdefault(spk, []).append(Utterance(spk, path, dur))
    return UtterancePool(speakers, str(manifest_path))


def pool_from_waveforms(waveforms, min_utt_len=0.0):
    """Pool from in-memory ``{speaker: [samples, ...]}``."""
    speakers = {}
    for spk, items in waveforms.items():
        for samples in items:
            dur = len(samples) / SAMPLE_RATE
            if dur >= min_utt_len:
                speakers.setdefault(spk, []).append(
                    Utterance(spk, None, dur, np.asarray(samples, dtype=np.float64)))
    return UtterancePool(speakers)


def _speaker_track(pool, spk, n_utts, beta, rng):
    placements = []
    t = 0.0
    cursor = 0
    for _ in range(n_utts):
        utt = rng.choice(pool.speakers[spk])
        samples = utt.load()
        t += rng.exponential(beta)
        start = max(int(round(t * SAMPLE_RATE)), cursor)
        placements.append((start, samples))
        cursor = start + len(samples)
        t = cursor / SAMPLE_RATE
    track = np.zeros(cursor)
    for start, samples in placements:
        track[start:start + len(samples)] = samples
    return track, placements


def simulate_mixture(pool, cfg, rng, recording="mix"):
    """One mixture and its annotation (before augmentation).

    Returns ``(waveform, annotation, tracks)`` where ``tracks`` maps
    speaker id to that speaker's clean track; the waveform is their sum.
    """
    candidates = [s for s in pool.speaker_ids if pool.speakers[s]]
    if len(candidates) < 2:
        raise InputError(f"utterance pool has {len(candidates)} usable speakers, need 2")
    chosen = rng.sample(candidates, 2)
    tracks, segments = {}, []
    for spk in chosen:
        n_utts = rng.randint(cfg.n_utts_min, cfg.n_utts_max)
        track, placements = _speaker_track(pool, spk, n_utts, cfg.gap_mean_beta, rng)
        tracks[spk] = track
        for start, samples in placements:
            if len(samples):
                segments.append(Segment(spk, start / SAMPLE_RATE,
                                        (start + len(samples)) / SAMPLE_RATE))
    n = max(len(t) for t in tracks.values())
    mixture = np.zeros(n)
    for track in tracks.values():
        mixture[:len(track)] += track
    segments.sort(key=lambda s: (s.start, s.speaker))
    return Waveform(mixture), Annotation(recording, segments, n / SAMPLE_RATE), tracks


def _apply_rir(x, rir):
    return convolve(x, np.asarray(rir, dtype=np.float64))[:len(x)]


def augment_mixture(w, noise_pool, rir_pool, snr_db, rng, use_noise=True):
    """Reverberate, then add noise at ``snr_db`` over the nonzero-signal region.

    ``snr_db = inf`` (or ``use_noise=False``) disables noise; an empty or
    ``None`` ``rir_pool`` disables reverberation. Output is clipped to the
    PCM16 range.
    """
    x = np.asarray(w.samples, dtype=np.float64)
    if rir_pool:
        x = _apply_rir(x, rng.choice(list(rir_pool)))
    if use_noise and math.isfinite(snr_db):
        if not noise_pool:
            raise ConfigurationError("noise requested but the noise pool is empty")
        clip = rng.choice(list(noise_pool))
        noise = np.asarray(getattr(clip, "samples", clip), dtype=np.float64)
        if noise.size == 0:
            raise ConfigurationError("empty noise clip")
        noise = np.resize(noise, len(x))
        active = x != 0
        if active.any():
            p_signal = np.mean(x[active] ** 2)
            p_noise = np.mean(noise[active] ** 2)
            if p_noise > 0:
                x = x + math.sqrt(p_signal / (p_noise * 10.0 ** (snr_db / 10.0))) * noise
    return Waveform(np.clip(x, -1.0, MAX_SAMPLE), w.sample_rate)


@dataclass
class SimulatedRecording:
    recording: str
    waveform: Waveform
    annotation: Annotation
    tracks: dict = field(default_factory=dict)


def simulate_corpus(pool, cfg, n_mixtures, noise_pool=None, rir_pool=None, prefix="mix"):
    """Mixtures with child seeds derived from (cfg.seed, index)."""
    root = Rng(cfg.seed)
    out = []
    for i in range(n_mixtures):
        rng = root.spawn(i)
        rec = f"{prefix}{i:04d}"
        if cfg.use_rir and rir_pool and cfg.rir_mode == "per_speaker":
            wave_, ann, tracks = simulate_mixture(pool, cfg, rng, rec)
            rir_rng = rng.spawn(1)
            mixed = np.zeros(len(wave_.samples))
            for spk in sorted(tracks):
                t = _apply_rir(tracks[spk], rir_rng.choice(list(rir_pool)))
                mixed[:len(t)] += t
            wave_ = Waveform(mixed)
            use_rir_pool = None
        else:
            wave_, ann, tracks = simulate_mixture(pool, cfg, rng, rec)
            use_rir_pool = rir_pool if cfg.use_rir else None
        if cfg.use_noise or use_rir_pool:
            aug_rng = rng.spawn(2)
            snr = aug_rng.choice(list(cfg.snr_db)) if cfg.use_noise else math.inf
            wave_ = augment_mixture(wave_, noise_pool, use_rir_pool, snr, aug_rng, cfg.use_noise)
        out.append(SimulatedRecording(rec, wave_, ann, tracks))
    return out


@dataclass
class CorpusStats:
    n_recordings: int
    average_duration: float
    overlap_ratio: float  # percent of union speech time
    total_hours: float
    speech_time: float
    overlap_time: float


def corpus_stats(annotations):
    annotations = list(annotations)
    if not annotations:
        raise InputError("corpus_stats of an empty corpus")
    total = speech = overlap = 0.0
    for ann in annotations:
        duration = ann.length
        total += duration
        for start, end, count in activity_profile(ann, duration):
            if count >= 1:
                speech += end - start
            if count >= 2:
                overlap += end - start
    return CorpusStats(
        n_recordings=len(annotations),
        average_duration=total / len(annotations),
        overlap_ratio=100.0 * overlap / speech if speech > 0 else 0.0,
        total_hours=total / 3600.0,
        speech_time=speech,
        overlap_time=overlap,
    )


def format_stats(stats, name="sim", min_length=0.0):
    header = "data\tmin_length\taverage_duration\toverlap_ratio\ttotal_duration"
    row = (f"{name}\t{min_length:g}s\t{stats.average_duration:.1f}s\t{stats.overlap_ratio:.1f}"
           f"\t{stats.total_hours:.4f}h")
    return f"{header}\n{row}\n"
