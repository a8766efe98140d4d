"""JSON run configuration with sections feature/encoder/train/sim/score and a top-level seed."""

import json
import os
from dataclasses import asdict, dataclass, field, fields

from eend_lab.encoder.config import EncoderConfig
from eend_lab.errors import ConfigurationError, InputError
from eend_lab.features import SpecAugmentConfig
from eend_lab.simulator import SimConfig
from eend_lab.training import TrainConfig

SECTIONS = ("feature", "encoder", "train", "sim", "score")


@dataclass
class FeatureConfig:
    n_mels: int = 23
    spec_augment: dict | None = None

    def __post_init__(self):
        if self.n_mels not in (23, 80):
            raise ConfigurationError(f"n_mels must be 23 or 80, got {self.n_mels}")
        if self.spec_augment is not None:
            self.augment()

    def augment(self):
        if self.spec_augment is None:
            return None
        known = {f.name for f in fields(SpecAugmentConfig)}
        unknown = set(self.spec_augment) - known
        if unknown:
            raise ConfigurationError(f"unknown spec_augment keys: {sorted(unknown)}")
        return SpecAugmentConfig(**self.spec_augment)


@dataclass
class ScoreConfig:
    collar: float = 0.25
    threshold: float = 0.5
    median_window: int = 1

    def __post_init__(self):
        if self.collar < 0:
            raise ConfigurationError("collar must be >= 0")
        if self.median_window < 1 or self.median_window % 2 == 0:
            raise ConfigurationError("median_window must be odd and >= 1")


def _section(cls, data, name):
    if not isinstance(data, dict):
        raise ConfigurationError(f"section {name!r} must be an object")
    if "seed" in data:
        raise ConfigurationError(f"section {name!r}: use the top-level 'seed'")
    known = {f.name for f in fields(cls)} - {"seed"}
    unknown = set(data) - known
    if unknown:
        raise ConfigurationError(f"unknown keys in section {name!r}: {sorted(unknown)}")
    try:
        return cls(**data)
    except TypeError as exc:
        raise ConfigurationError(f"section {name!r}: {exc}") from exc


@dataclass
class RunConfig:
    seed: int = 0
    feature: FeatureConfig = field(default_factory=FeatureConfig)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    sim: SimConfig = field(default_factory=SimConfig)
    score: ScoreConfig = field(default_factory=ScoreConfig)

    @classmethod
    def from_dict(cls, data):
        if not isinstance(data, dict):
            raise ConfigurationError("config must be a JSON object")
        unknown = set(data) - set(SECTIONS) - {"seed"}
        if unknown:
            raise ConfigurationError(f"unknown top-level config keys: {sorted(unknown)}")
        seed = data.get("seed", 0)
        if not isinstance(seed, int) or seed < 0:
            raise ConfigurationError("seed must be a non-negative integer")
        cfg = cls(
            seed=seed,
            feature=_section(FeatureConfig, data.get("feature", {}), "feature"),
            encoder=_section(EncoderConfig, data.get("encoder", {}), "encoder"),
            train=_section(TrainConfig, data.get("train", {}), "train"),
            sim=_section(SimConfig, data.get("sim", {}), "sim"),
            score=_section(ScoreConfig, data.get("score", {}), "score"),
        )
        return cfg.with_seed(seed)

    def with_seed(self, seed):
        self.seed = seed
        self.train.seed = seed
        self.sim.seed = seed
        return self

    def encoder_config(self):
        """Encoder config with input dims following the feature section."""
        if self.encoder.input_dims != self.feature.n_mels:
            data = self.encoder.to_dict()
            data["input_dims"] = self.feature.n_mels
            return EncoderConfig(**data)
        return self.encoder

    def to_dict(self):
        def strip(d):
            d = dict(d)
            d.pop("seed", None)
            return d

        return {
            "seed": self.seed,
            "feature": asdict(self.feature),
            "encoder": self.encoder_config().to_dict(),
            "train": strip(self.train.to_dict()),
            "sim": strip(self.sim.to_dict()),
            "score": asdict(self.score),
        }

    def echo(self, out_dir):
        os.makedirs(out_dir, exist_ok=True)
        path = os.path.join(out_dir, "config.echo.json")
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")
        return path


def load_config(path=None):
    if path is None:
        return RunConfig()
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except OSError as exc:
        raise InputError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"{path}: invalid JSON ({exc})") from exc
    return RunConfig.from_dict(data)
