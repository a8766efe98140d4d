"""Permutation-invariant training, optimizers, Noam schedule, averaging, fine-tuning."""

import itertools
import logging
import math
import os
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from eend_lab.annotation import merge_intervals
from eend_lab.encoder.decide import decide
from eend_lab.encoder.model import OUTPUT_SHIFT, backward, forward
from eend_lab.encoder.params import EncoderParams, init_params, load_checkpoint, save_checkpoint
from eend_lab.errors import ConfigurationError, InputError, TrainingError
from eend_lab.features import spec_augment
from eend_lab.numerics.rng import Rng
from eend_lab.scoring import score_corpus

log = logging.getLogger(__name__)

PROB_CLIP = 1e-7


@dataclass
class Example:
    """One training/evaluation recording: raw 10 ms features plus references."""

    recording: str
    features: object  # FeatureMatrix
    labels: np.ndarray  # (T', S) in {0, 1}
    annotation: object = None


def rasterize_labels(annotation, n_frames, n_speakers=2, frame_shift=OUTPUT_SHIFT,
                     speakers=None):
    """(n_frames, n_speakers) binary labels.

    Frame t covers [t*shift, (t+1)*shift); a speaker is active when their
    merged segments cover at least half of it. Columns follow ``speakers``
    (default: sorted speaker ids); missing speakers give all-zero columns.
    """
    speakers = annotation.speakers if speakers is None else list(speakers)
    if len(speakers) > n_speakers:
        raise InputError(
            f"{annotation.recording}: {len(speakers)} speakers exceed n_speakers={n_speakers}")
    labels = np.zeros((n_frames, n_speakers))
    by_spk = annotation.by_speaker()
    edges = np.arange(n_frames + 1) * frame_shift
    for col, spk in enumerate(speakers):
        covered = np.zeros(n_frames)
        for start, end in merge_intervals(by_spk.get(spk, [])):
            covered += np.clip(np.minimum(edges[1:], end) - np.maximum(edges[:-1], start),
                               0.0, None)
        labels[:, col] = covered >= 0.5 * frame_shift - 1e-9
    return labels


def _bce(zc, y):
    return -(y * np.log(zc) + (1.0 - y) * np.log1p(-zc))


def pit_bce_loss(z, y):
    """Minimum mean BCE over label-column permutations.

    Returns ``(loss, perm)``; ``perm[s]`` is the label column matched to
    output ``s``. Ties go to the lexicographically smallest permutation.
    """
    z = np.asarray(getattr(z, "values", z), dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if z.shape != y.shape or z.ndim != 2:
        raise InputError(f"posterior shape {z.shape} != label shape {y.shape}")
    zc = np.clip(z, PROB_CLIP, 1.0 - PROB_CLIP)
    best, best_perm = math.inf, None
    for perm in itertools.permutations(range(y.shape[1])):
        loss = float(_bce(zc, y[:, perm]).mean())
        if loss < best:
            best, best_perm = loss, perm
    return best, best_perm


def pit_bce_grad(z, y, perm):
    """dL/dZ of the PIT loss at a fixed permutation (zero where clipping is active)."""
    z = np.asarray(getattr(z, "values", z), dtype=np.float64)
    yp = np.asarray(y, dtype=np.float64)[:, list(perm)]
    inside = (z > PROB_CLIP) & (z < 1.0 - PROB_CLIP)
    zc = np.clip(z, PROB_CLIP, 1.0 - PROB_CLIP)
    grad = (-yp / zc + (1.0 - yp) / (1.0 - zc)) / z.size
    return np.where(inside, grad, 0.0)


def noam_lr(step, d_model, warmup=25000, scale=1.0):
    if step < 1:
        raise InputError(f"noam_lr step must be >= 1, got {step}")
    if warmup < 1:
        raise ConfigurationError("warmup must be >= 1")
    return scale * d_model ** -0.5 * min(step ** -0.5, step * warmup ** -1.5)


@dataclass
class TrainConfig:
    optimizer: str = "adam"
    schedule: str = "noam"  # noam: lr is the Noam scale factor; constant: lr is used as is
    lr: float = 1.0
    betas: tuple = (0.9, 0.98)
    eps: float = 1e-9
    momentum: float = 0.0
    weight_decay: float = 0.0
    warmup_steps: int = 25000
    batch_size: int = 64
    epochs: int = 100
    average_last: int = 10
    seed: int = 0
    finetune_epochs: int = 20

    def __post_init__(self):
        self.betas = tuple(self.betas)
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigurationError(f"optimizer must be adam or sgd, got {self.optimizer!r}")
        if self.schedule not in ("noam", "constant"):
            raise ConfigurationError(f"schedule must be noam or constant, got {self.schedule!r}")
        if self.lr < 0:
            raise ConfigurationError("lr must be >= 0")
        if self.warmup_steps < 1:
            raise ConfigurationError("warmup_steps must be >= 1")
        if self.batch_size < 1 or self.epochs < 0 or self.average_last < 1:
            raise ConfigurationError("batch_size, average_last must be >= 1 and epochs >= 0")
        if len(self.betas) != 2 or not all(0 <= b < 1 for b in self.betas):
            raise ConfigurationError("betas must be two values in [0, 1)")
        if self.finetune_epochs < 0:
            raise ConfigurationError("finetune_epochs must be >= 0")

    def to_dict(self):
        d = asdict(self)
        d["betas"] = list(self.betas)
        return d

    @classmethod
    def from_dict(cls, data):
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigurationError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**data)

    def lr_at(self, step, d_model):
        if self.schedule == "noam":
            return noam_lr(step, d_model, self.warmup_steps, self.lr)
        return self.lr


def new_optimizer_state(params, cfg):
    zeros = params.zeros_like()
    if cfg.optimizer == "adam":
        return {"step": 0, "m": zeros, "v": {k: np.zeros_like(a) for k, a in zeros.items()}}
    return {"step": 0, "velocity": zeros}


def optimizer_step(params, grads, state, cfg, lr):
    """One Adam or SGD update in place; returns ``params``.

    SGD: v <- momentum*v + g + weight_decay*theta; theta <- theta - lr*v.
    Adam adds weight_decay*theta to the gradient (L2) and uses bias correction.
    """
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient for parameter {name}")
    state["step"] += 1
    t = state["step"]
    for name, theta in params.items():
        g = grads[name]
        if cfg.weight_decay:
            g = g + cfg.weight_decay * theta
        if cfg.optimizer == "sgd":
            v = state["velocity"][name]
            v *= cfg.momentum
            v += g
            theta -= lr * v
        else:
            b1, b2 = cfg.betas
            m, v = state["m"][name], state["v"][name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            m_hat = m / (1.0 - b1 ** t)
            v_hat = v / (1.0 - b2 ** t)
            theta -= lr * m_hat / (np.sqrt(v_hat) + cfg.eps)
    return params


def average_params(models):
    if not models:
        raise InputError("nothing to average")
    cfg = models[0].config
    for m in models[1:]:
        if m.config != cfg:
            raise InputError("cannot average checkpoints with different encoder configs")
    # Mean as first + mean offset: exact when all inputs are identical.
    tensors = {}
    for name in models[0]:
        ref = models[0][name]
        acc = np.zeros_like(ref)
        for m in models[1:]:
            acc += m[name] - ref
        tensors[name] = ref + acc / len(models)
    return EncoderParams(cfg, tensors)


def average_checkpoints(paths):
    """Elementwise mean of checkpoint files (or already-loaded EncoderParams)."""
    models = [p if isinstance(p, EncoderParams) else load_checkpoint(p) for p in paths]
    return average_params(models)


def sequence_loss_and_grads(example, params, augment=None, augment_rng=None, dropout_rng=None):
    feats = example.features
    if augment is not None:
        feats = spec_augment(feats, augment, augment_rng)
    z, cache = forward(feats, params, training=True, rng=dropout_rng, return_cache=True)
    if z.values.shape != example.labels.shape:
        raise InputError(
            f"{example.recording}: labels {example.labels.shape} vs posteriors {z.values.shape}")
    loss, perm = pit_bce_loss(z.values, example.labels)
    grads = backward(cache, params, pit_bce_grad(z.values, example.labels, perm))
    return loss, grads


@dataclass
class TrainResult:
    params: EncoderParams
    checkpoints: list = field(default_factory=list)  # last ``average_last`` epochs, in memory
    checkpoint_paths: list = field(default_factory=list)
    log: list = field(default_factory=list)  # (step, lr, loss)

    def log_text(self):
        return "".join(f"{s}\t{lr:.10g}\t{loss:.10g}\n" for s, lr, loss in self.log)

    def averaged(self):
        return average_params(self.checkpoints)


def train(corpus, encoder_cfg, cfg, init=None, out_dir=None, augment=None, on_step=None):
    """Mini-batch training; one checkpoint per epoch.

    Sequences in a batch are processed independently and their gradients
    summed in batch order. Shuffling, SpecAugment (``augment``, a
    SpecAugmentConfig) and dropout draw from child streams of
    ``Rng(cfg.seed)``.
    """
    corpus = list(corpus)
    if not corpus:
        raise InputError("empty training corpus")
    root = Rng(cfg.seed)
    params = init.copy() if init is not None else init_params(encoder_cfg, root.spawn(0).seed)
    if params.config != encoder_cfg:
        raise ConfigurationError("initial parameters do not match the encoder config")
    shuffle_rng, aug_rng, drop_rng = root.spawn(1), root.spawn(2), root.spawn(3)
    state = new_optimizer_state(params, cfg)
    result = TrainResult(params)
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
    step = 0
    for epoch in range(1, cfg.epochs + 1):
        order = shuffle_rng.shuffle(list(range(len(corpus))))
        for b in range(0, len(order), cfg.batch_size):
            batch = order[b:b + cfg.batch_size]
            total = None
            losses = []
            for idx in batch:
                loss, grads = sequence_loss_and_grads(corpus[idx], params, augment, aug_rng,
                                                      drop_rng)
                losses.append(loss)
                if total is None:
                    total = grads
                else:
                    for k in total:
                        total[k] += grads[k]
            step += 1
            lr = cfg.lr_at(step, encoder_cfg.d_model)
            optimizer_step(params, total, state, cfg, lr)
            mean_loss = float(np.mean(losses))
            result.log.append((step, lr, mean_loss))
            if on_step is not None:
                on_step(step, lr, mean_loss)
        snapshot = params.copy()
        result.checkpoints.append(snapshot)
        result.checkpoints = result.checkpoints[-cfg.average_last:]
        if out_dir is not None:
            path = os.path.join(out_dir, f"epoch{epoch:03d}.ckpt")
            save_checkpoint(path, snapshot)
            result.checkpoint_paths.append(path)
    if not result.checkpoints:
        result.checkpoints.append(params.copy())
    return result


def infer(params, examples, threshold=0.5, median_window=1):
    """Recording id -> hypothesis Annotation."""
    return {ex.recording: decide(forward(ex.features, params), threshold, median_window,
                                 ex.recording)
            for ex in examples}


def evaluate_der(params, examples, collar=0.25, threshold=0.5, median_window=1):
    ref = {ex.recording: ex.annotation for ex in examples}
    if any(a is None for a in ref.values()):
        raise InputError("evaluation examples need reference annotations")
    hyp = infer(params, examples, threshold, median_window)
    return score_corpus(ref, hyp, collar)[1]


FINETUNE_ADAM_LR = 1e-5
FINETUNE_SGD_LRS = (0.01, 0.005, 0.001)
FINETUNE_MOMENTA = (0.9, 0.0)
FINETUNE_DECAYS = (0.0, 0.0001)


def finetune_grid_configs(batch_size=64, epochs=20, seed=0):
    """Fixed-lr Adam plus the 3 x 2 x 2 SGD grid: 13 configurations."""
    configs = [TrainConfig(optimizer="adam", schedule="constant", lr=FINETUNE_ADAM_LR,
                           batch_size=batch_size, epochs=epochs, seed=seed)]
    for lr, mom, wd in itertools.product(FINETUNE_SGD_LRS, FINETUNE_MOMENTA, FINETUNE_DECAYS):
        configs.append(TrainConfig(optimizer="sgd", schedule="constant", lr=lr, momentum=mom,
                                   weight_decay=wd, batch_size=batch_size, epochs=epochs,
                                   seed=seed))
    return configs


@dataclass
class FinetuneResult:
    config: TrainConfig
    der: float
    params: EncoderParams = None


def finetune_grid(base, adapt, dev, epochs=20, batch_size=64, seed=0, collar=0.25,
                  configs=None):
    """Fine-tune ``base`` under every grid configuration, ranked by dev-set DER.

    The sort is stable, so ties keep grid order.
    """
    adapt = list(adapt)
    if not adapt:
        raise InputError("empty adaptation corpus")
    if configs is None:
        configs = finetune_grid_configs(batch_size, epochs, seed)
    results = []
    for cfg in configs:
        if cfg.epochs == 0:
            tuned = base.copy()
        else:
            tuned = train(adapt, base.config, cfg, init=base).params
        pooled = evaluate_der(tuned, dev, collar)
        log.info("finetune %s lr=%g momentum=%g wd=%g -> DER %.2f",
                 cfg.optimizer, cfg.lr, cfg.momentum, cfg.weight_decay, pooled.der)
        results.append(FinetuneResult(cfg, pooled.der, tuned))
    return sorted(results, key=lambda r: r.der)


def format_finetune_report(results):
    lines = ["optimizer\tlr\tmomentum\tweight_decay\tder"]
    for r in results:
        c = r.config
        lines.append(f"{c.optimizer}\t{c.lr:g}\t{c.momentum:g}\t{c.weight_decay:g}\t{r.der:.2f}")
    return "\n".join(lines) + "\n"
