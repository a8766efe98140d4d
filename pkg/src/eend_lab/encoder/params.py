"""Parameter layout, initialisation, counting and checkpoint files."""

import json
import math
import struct
from dataclasses import dataclass

import numpy as np

from eend_lab.encoder.config import SUBSAMPLE_KERNELS, EncoderConfig
from eend_lab.errors import ConfigurationError, FormatError, InputError
from eend_lab.numerics.rng import Rng

CKPT_MAGIC = b"EENDCKPT"
CKPT_VERSION = 1


@dataclass(frozen=True)
class ParamSpec:
    name: str
    shape: tuple
    init: str  # "glorot" | "zeros" | "ones"
    fan: tuple = (0, 0)

    @property
    def size(self):
        return int(np.prod(self.shape, dtype=np.int64))


def _linear(prefix, n_in, n_out):
    return [ParamSpec(f"{prefix}.weight", (n_in, n_out), "glorot", (n_in, n_out)),
            ParamSpec(f"{prefix}.bias", (n_out,), "zeros")]


def _norm(prefix, d):
    return [ParamSpec(f"{prefix}.gain", (d,), "ones"),
            ParamSpec(f"{prefix}.bias", (d,), "zeros")]


def _attention(prefix, d):
    specs = []
    for proj in ("q", "k", "v", "o"):
        specs += _linear(f"{prefix}.{proj}", d, d)
    return specs


def _ffn(prefix, d, units):
    return _linear(f"{prefix}.fc1", d, units) + _linear(f"{prefix}.fc2", units, d)


def frontend_freq_dims(cfg):
    (_, sf1), (_, sf2) = cfg.subsample_strides
    f1 = -(-cfg.input_dims // sf1)
    return f1, -(-f1 // sf2)


def parameter_specs(cfg):
    """Ordered parameter layout for a config; the order is the checkpoint order."""
    d = cfg.d_model
    specs = []
    if cfg.frontend == "conv_subsample":
        c = cfg.channels
        (k1t, k1f), (k2t, k2f) = SUBSAMPLE_KERNELS
        specs.append(ParamSpec("frontend.conv1.depthwise", (k1t, k1f, 1), "glorot",
                               (k1t * k1f, k1t * k1f)))
        specs += _linear("frontend.conv1.pointwise", 1, c)
        specs.append(ParamSpec("frontend.conv2.depthwise", (k2t, k2f, c), "glorot",
                               (k2t * k2f, k2t * k2f)))
        specs += _linear("frontend.conv2.pointwise", c, c)
        specs += _linear("frontend.proj", frontend_freq_dims(cfg)[1] * c, d)
    else:
        specs += _linear("frontend.proj", 15 * cfg.input_dims, d)
    for i in range(cfg.n_blocks):
        p = f"blocks.{i}"
        if cfg.arch == "transformer":
            specs += _norm(f"{p}.attn_norm", d)
            specs += _attention(f"{p}.attn", d)
            specs += _norm(f"{p}.ffn_norm", d)
            specs += _ffn(f"{p}.ffn", d, cfg.ffn_units)
        else:
            specs += _norm(f"{p}.ffn1_norm", d)
            specs += _ffn(f"{p}.ffn1", d, cfg.ffn_units)
            specs += _norm(f"{p}.attn_norm", d)
            specs += _attention(f"{p}.attn", d)
            specs += _norm(f"{p}.conv_norm", d)
            specs += _linear(f"{p}.conv.pointwise1", d, 2 * d)
            k = cfg.conv_kernel
            specs.append(ParamSpec(f"{p}.conv.depthwise.weight", (k, d), "glorot", (k, k)))
            specs.append(ParamSpec(f"{p}.conv.depthwise.bias", (d,), "zeros"))
            specs.append(ParamSpec(f"{p}.conv.seqnorm.scale", (d,), "ones"))
            specs.append(ParamSpec(f"{p}.conv.seqnorm.shift", (d,), "zeros"))
            specs += _linear(f"{p}.conv.pointwise2", d, d)
            specs += _norm(f"{p}.ffn2_norm", d)
            specs += _ffn(f"{p}.ffn2", d, cfg.ffn_units)
            specs += _norm(f"{p}.out_norm", d)
    specs += _norm("encoder_norm", d)
    specs += _linear("head", d, cfg.n_speakers)
    return specs


def count_parameters(cfg):
    return sum(s.size for s in parameter_specs(cfg))


def parameter_ledger(cfg):
    """Rows of (group, term, count) that add up to :func:`count_parameters`."""
    rows = []
    for s in parameter_specs(cfg):
        parts = s.name.split(".")
        group = ".".join(parts[:2]) if parts[0] in ("frontend", "blocks") else parts[0]
        term = " x ".join(str(n) for n in s.shape)
        rows.append((group, s.name, term, s.size))
    return rows


def format_ledger(cfg):
    lines = [f"# {cfg.arch} / {cfg.frontend}, input_dims={cfg.input_dims}",
             "name\tshape\tcount"]
    groups = {}
    for group, name, term, size in parameter_ledger(cfg):
        lines.append(f"{name}\t{term}\t{size}")
        groups[group] = groups.get(group, 0) + size
    lines.append("")
    lines.append("group\tcount")
    for group, size in groups.items():
        lines.append(f"{group}\t{size}")
    lines.append(f"total\t{count_parameters(cfg)}")
    return "\n".join(lines) + "\n"


class EncoderParams:
    """Named float64 tensors for one model, in layout order."""

    def __init__(self, config, tensors, _trusted=False):
        self.config = config
        self.tensors = dict(tensors)
        if not _trusted:
            self._check()

    def _check(self):
        specs = parameter_specs(self.config)
        names = [s.name for s in specs]
        if list(self.tensors) != names:
            missing = set(names) - set(self.tensors)
            extra = set(self.tensors) - set(names)
            if missing or extra:
                raise ConfigurationError(
                    f"parameter names do not match config (missing {sorted(missing)[:3]}, "
                    f"extra {sorted(extra)[:3]})")
            self.tensors = {n: self.tensors[n] for n in names}
        for s in specs:
            arr = np.asarray(self.tensors[s.name], dtype=np.float64)
            if arr.shape != s.shape:
                raise ConfigurationError(f"{s.name}: shape {arr.shape}, expected {s.shape}")
            self.tensors[s.name] = arr

    def __getitem__(self, name):
        return self.tensors[name]

    def __iter__(self):
        return iter(self.tensors)

    def items(self):
        return self.tensors.items()

    @property
    def size(self):
        return sum(a.size for a in self.tensors.values())

    def copy(self):
        return EncoderParams(self.config, {k: v.copy() for k, v in self.tensors.items()},
                             _trusted=True)

    def flatten(self):
        return np.concatenate([a.ravel() for a in self.tensors.values()])

    def with_flat(self, vector):
        vector = np.asarray(vector, dtype=np.float64).ravel()
        if vector.size != self.size:
            raise ConfigurationError(f"flat vector has {vector.size} values, expected {self.size}")
        out, offset = {}, 0
        for name, arr in self.tensors.items():
            out[name] = vector[offset:offset + arr.size].reshape(arr.shape)
            offset += arr.size
        return EncoderParams(self.config, out, _trusted=True)

    def zeros_like(self):
        return {k: np.zeros_like(v) for k, v in self.tensors.items()}


def init_params(cfg, seed=0):
    """Glorot-uniform weights, zero biases, unit norm gains, from a SplitMix64 stream."""
    rng = Rng(seed)
    tensors = {}
    for s in parameter_specs(cfg):
        if s.init == "zeros":
            tensors[s.name] = np.zeros(s.shape)
        elif s.init == "ones":
            tensors[s.name] = np.ones(s.shape)
        else:
            limit = math.sqrt(6.0 / (s.fan[0] + s.fan[1]))
            tensors[s.name] = rng.uniform_array(s.size, -limit, limit).reshape(s.shape)
    return EncoderParams(cfg, tensors)


def zero_params(cfg, norm_gain=1.0):
    """Every weight and bias zero; layer-norm gains and sequence-norm scales set to ``norm_gain``."""
    tensors = {}
    for s in parameter_specs(cfg):
        fill = norm_gain if s.init == "ones" else 0.0
        tensors[s.name] = np.full(s.shape, fill)
    return EncoderParams(cfg, tensors)


def canonical_json(data):
    return json.dumps(data, sort_keys=True, separators=(",", ":"), ensure_ascii=True)


def serialize_checkpoint(params):
    cfg_text = canonical_json(params.config.to_dict()).encode("ascii")
    parts = [CKPT_MAGIC, struct.pack("<II", CKPT_VERSION, len(cfg_text)), cfg_text,
             struct.pack("<I", len(params.tensors))]
    for name, arr in params.items():
        raw = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<Q", arr.size))
        parts.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    return b"".join(parts)


def deserialize_checkpoint(blob, source="<bytes>"):
    try:
        if blob[:8] != CKPT_MAGIC:
            raise FormatError(f"{source}: bad checkpoint magic {blob[:8]!r}")
        version, cfg_len = struct.unpack_from("<II", blob, 8)
        if version != CKPT_VERSION:
            raise FormatError(f"{source}: unsupported checkpoint version {version}")
        pos = 16
        cfg = EncoderConfig.from_dict(json.loads(blob[pos:pos + cfg_len].decode("ascii")))
        pos += cfg_len
        (n_tensors,) = struct.unpack_from("<I", blob, pos)
        pos += 4
        shapes = {s.name: s.shape for s in parameter_specs(cfg)}
        tensors = {}
        for _ in range(n_tensors):
            (name_len,) = struct.unpack_from("<I", blob, pos)
            pos += 4
            name = blob[pos:pos + name_len].decode("utf-8")
            pos += name_len
            (count,) = struct.unpack_from("<Q", blob, pos)
            pos += 8
            if name not in shapes:
                raise FormatError(f"{source}: unknown parameter {name!r}")
            end = pos + 8 * count
            if end > len(blob):
                raise FormatError(f"{source}: truncated payload for {name}")
            arr = np.frombuffer(blob[pos:end], dtype="<f8").astype(np.float64)
            tensors[name] = arr.reshape(shapes[name])
            pos = end
    except (struct.error, ValueError, UnicodeDecodeError) as exc:
        raise FormatError(f"{source}: malformed checkpoint ({exc})") from exc
    if pos != len(blob):
        raise FormatError(f"{source}: {len(blob) - pos} trailing bytes")
    try:
        return EncoderParams(cfg, tensors)
    except ConfigurationError as exc:
        raise FormatError(f"{source}: {exc}") from exc


def save_checkpoint(path, params):
    with open(path, "wb") as fh:
        fh.write(serialize_checkpoint(params))


def load_checkpoint(path):
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        raise InputError(f"cannot read checkpoint {path}: {exc}") from exc
    return deserialize_checkpoint(blob, str(path))
