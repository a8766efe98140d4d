from dataclasses import asdict, dataclass, fields

from eend_lab.errors import ConfigurationError

ARCHS = ("transformer", "conformer")
FRONTENDS = ("conv_subsample", "stacked")

SUBSAMPLE_KERNELS = ((3, 3), (7, 7))
SUBSAMPLE_STRIDES = {
    23: ((2, 1), (5, 1)),
    80: ((2, 2), (5, 2)),
}


@dataclass(frozen=True)
class EncoderConfig:
    """Architecture of a TB-EEND (``transformer``) or CB-EEND (``conformer``) model.

    ``ffn_dim`` defaults to 1024 for the Transformer and 256 for the
    Conformer; ``frontend_channels`` defaults to ``d_model``.
    """

    arch: str = "conformer"
    n_blocks: int = 4
    d_model: int = 256
    n_heads: int = 4
    ffn_dim: int | None = None
    conv_kernel: int = 32
    n_speakers: int = 2
    frontend: str = "conv_subsample"
    input_dims: int = 23
    frontend_channels: int | None = None
    dropout: float = 0.0
    ln_eps: float = 1e-5

    def __post_init__(self):
        if self.arch not in ARCHS:
            raise ConfigurationError(f"arch must be one of {ARCHS}, got {self.arch!r}")
        if self.frontend not in FRONTENDS:
            raise ConfigurationError(f"frontend must be one of {FRONTENDS}, got {self.frontend!r}")
        if self.frontend == "conv_subsample" and self.input_dims not in SUBSAMPLE_STRIDES:
            raise ConfigurationError(
                f"conv_subsample frontend needs input_dims 23 or 80, got {self.input_dims}")
        if self.input_dims < 1:
            raise ConfigurationError("input_dims must be >= 1")
        if self.n_blocks < 0:
            raise ConfigurationError("n_blocks must be >= 0")
        if self.d_model < 1 or self.n_heads < 1 or self.d_model % self.n_heads:
            raise ConfigurationError(
                f"d_model ({self.d_model}) must be a positive multiple of n_heads ({self.n_heads})")
        if self.conv_kernel < 1:
            raise ConfigurationError("conv_kernel must be >= 1")
        if self.n_speakers < 1:
            raise ConfigurationError("n_speakers must be >= 1")
        if self.ffn_dim is not None and self.ffn_dim < 1:
            raise ConfigurationError("ffn_dim must be >= 1")
        if self.frontend_channels is not None and self.frontend_channels < 1:
            raise ConfigurationError("frontend_channels must be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigurationError("dropout must be in [0, 1)")
        if self.ln_eps <= 0:
            raise ConfigurationError("ln_eps must be positive")

    @property
    def ffn_units(self):
        if self.ffn_dim is not None:
            return self.ffn_dim
        return 1024 if self.arch == "transformer" else 256

    @property
    def channels(self):
        return self.frontend_channels if self.frontend_channels is not None else self.d_model

    @property
    def subsample_strides(self):
        return SUBSAMPLE_STRIDES[self.input_dims]

    def output_frames(self, n_frames):
        if self.frontend == "stacked":
            return -(-n_frames // 10)
        (st1, _), (st2, _) = self.subsample_strides
        return -(-(-(-n_frames // st1)) // st2)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, data):
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigurationError(f"unknown encoder config keys: {sorted(unknown)}")
        return cls(**data)


def transformer_default(**overrides):
    return EncoderConfig(**{"arch": "transformer", **overrides})


def conformer_default(**overrides):
    return EncoderConfig(**{"arch": "conformer", **overrides})


def toy_config(arch="conformer", frontend="conv_subsample", **overrides):
    """Small model used for gradient checks and overfit probes (D=8, H=2, P=2)."""
    base = dict(arch=arch, frontend=frontend, n_blocks=2, d_model=8, n_heads=2,
                ffn_dim=16, conv_kernel=5, n_speakers=2, input_dims=23, frontend_channels=4)
    base.update(overrides)
    return EncoderConfig(**base)
