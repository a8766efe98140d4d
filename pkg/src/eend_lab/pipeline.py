"""Data-directory conventions and the end-to-end smoke pipeline.

A data directory holds ``wav/<recording>.wav``, optionally
``feats/<recording>.feat`` and ``ref.rttm``.
"""

import logging
import os
from concurrent.futures import ThreadPoolExecutor

from eend_lab.annotation import Annotation
from eend_lab.config import RunConfig
from eend_lab.encoder.config import toy_config
from eend_lab.encoder.params import save_checkpoint
from eend_lab.errors import EendError, InputError
from eend_lab.features import load_wav, logmel, read_features, write_features, write_wav
from eend_lab.scoring import emit_rttm, format_der_table, parse_rttm, score_corpus
from eend_lab.simulator import corpus_stats, format_stats, pool_from_waveforms, simulate_corpus
from eend_lab.synth import synthetic_pool_waveforms
from eend_lab.training import (Example, TrainConfig, average_params, infer, rasterize_labels,
                               train)
from eend_lab.turntaking import compare_corpora, format_similarity_report

log = logging.getLogger(__name__)


def jobs_from_env(default=1):
    try:
        return max(1, int(os.environ.get("EEND_LAB_JOBS", default)))
    except ValueError:
        return default


def _write(path, text):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def write_dataset(out_dir, recordings, name="sim", min_length=0.0):
    os.makedirs(os.path.join(out_dir, "wav"), exist_ok=True)
    for rec in recordings:
        write_wav(os.path.join(out_dir, "wav", f"{rec.recording}.wav"), rec.waveform)
    annotations = [rec.annotation for rec in recordings]
    _write(os.path.join(out_dir, "ref.rttm"), emit_rttm(annotations))
    if annotations:
        _write(os.path.join(out_dir, "stats.tsv"),
               format_stats(corpus_stats(annotations), name, min_length))


def recording_ids(data_dir):
    wav_dir = os.path.join(data_dir, "wav")
    feat_dir = os.path.join(data_dir, "feats")
    if os.path.isdir(feat_dir):
        names = [f[:-5] for f in os.listdir(feat_dir) if f.endswith(".feat")]
    elif os.path.isdir(wav_dir):
        names = [f[:-4] for f in os.listdir(wav_dir) if f.endswith(".wav")]
    else:
        raise InputError(f"{data_dir}: no wav/ or feats/ directory")
    if not names:
        raise InputError(f"{data_dir}: no recordings")
    return sorted(names)


def featurize_dir(data_dir, out_dir, n_mels=23, jobs=1):
    feat_dir = os.path.join(out_dir, "feats")
    os.makedirs(feat_dir, exist_ok=True)
    wav_dir = os.path.join(data_dir, "wav")
    if not os.path.isdir(wav_dir):
        raise InputError(f"{data_dir}: no wav/ directory")
    names = sorted(f[:-4] for f in os.listdir(wav_dir) if f.endswith(".wav"))
    if not names:
        raise InputError(f"{wav_dir}: no .wav files")

    def one(name):
        feats = logmel(load_wav(os.path.join(wav_dir, f"{name}.wav")), n_mels)
        write_features(os.path.join(feat_dir, f"{name}.feat"), feats)
        return name

    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(one, names))


def load_features(data_dir, name, n_mels):
    feat_path = os.path.join(data_dir, "feats", f"{name}.feat")
    if os.path.exists(feat_path):
        feats = read_features(feat_path)
        if feats.dims != n_mels:
            raise InputError(f"{feat_path}: {feats.dims} dims, config expects {n_mels}")
        return feats
    return logmel(load_wav(os.path.join(data_dir, "wav", f"{name}.wav")), n_mels)


def load_examples(data_dir, encoder_cfg, n_mels, need_reference=True):
    ref_path = os.path.join(data_dir, "ref.rttm")
    refs = parse_rttm(ref_path) if os.path.exists(ref_path) else {}
    if need_reference and not refs:
        raise InputError(f"{data_dir}: missing or empty ref.rttm")
    examples = []
    for name in recording_ids(data_dir):
        feats = load_features(data_dir, name, n_mels)
        n_out = encoder_cfg.output_frames(feats.frames)
        ann = refs.get(name)
        if ann is None:
            if need_reference:
                raise InputError(f"{data_dir}: no reference for recording {name}")
            ann = Annotation(name, [], feats.frames * feats.frame_shift)
        labels = rasterize_labels(ann, n_out, encoder_cfg.n_speakers)
        examples.append(Example(name, feats, labels, ann))
    return examples


def smoke_config(seed=0):
    """Toy Conformer, short synthetic mixtures, training long enough to overfit."""
    cfg = RunConfig()
    cfg.encoder = toy_config("conformer", "conv_subsample")
    cfg.train = TrainConfig(optimizer="adam", schedule="noam", lr=1.0, warmup_steps=50,
                            batch_size=2, epochs=300, average_last=10)
    cfg.sim.n_utts_min, cfg.sim.n_utts_max, cfg.sim.n_mixtures = 4, 6, 2
    return cfg.with_seed(seed)


def _stage(name, fn, *args, **kwargs):
    log.info("smoke: %s", name)
    try:
        return fn(*args, **kwargs)
    except EendError as exc:
        wrapped = type(exc)(f"stage {name} failed: {exc}")
        if hasattr(exc, "line_number"):
            wrapped.line_number = exc.line_number
        raise wrapped from exc
    except Exception as exc:  # noqa: BLE001
        raise EendError(f"stage {name} failed: {exc}") from exc


def pipeline_smoke(out_dir, seed=0, cfg=None):
    """simulate -> featurize -> train -> average -> infer -> score -> similarity.

    Writes every artifact under ``out_dir`` plus ``summary.tsv`` and returns
    the summary as a dict.
    """
    cfg = smoke_config(seed) if cfg is None else cfg.with_seed(seed)
    os.makedirs(out_dir, exist_ok=True)
    cfg.echo(out_dir)
    enc = cfg.encoder_config()
    n_mels = cfg.feature.n_mels
    train_dir = os.path.join(out_dir, "sim_train")
    test_dir = os.path.join(out_dir, "sim_test")

    def simulate():
        pool = pool_from_waveforms(synthetic_pool_waveforms(seed), cfg.sim.min_utt_len)
        n = cfg.sim.n_mixtures
        write_dataset(train_dir, simulate_corpus(pool, cfg.sim, n, prefix="train"),
                      "train", cfg.sim.min_utt_len)
        test_sim = type(cfg.sim).from_dict({**cfg.sim.to_dict(), "seed": seed + 1})
        write_dataset(test_dir, simulate_corpus(pool, test_sim, n, prefix="test"),
                      "test", cfg.sim.min_utt_len)

    _stage("simulate", simulate)
    _stage("featurize", featurize_dir, train_dir, train_dir, n_mels)
    examples = _stage("featurize", load_examples, train_dir, enc, n_mels)
    result = _stage("train", train, examples, enc, cfg.train,
                    out_dir=os.path.join(out_dir, "checkpoints"),
                    augment=cfg.feature.augment())
    _write(os.path.join(out_dir, "train.log"), result.log_text())
    averaged = _stage("average", average_params, result.checkpoints)
    save_checkpoint(os.path.join(out_dir, "averaged.ckpt"), averaged)
    hyp = _stage("infer", infer, averaged, examples, cfg.score.threshold, cfg.score.median_window)
    _write(os.path.join(out_dir, "hyp.rttm"), emit_rttm(hyp))
    ref = {ex.recording: ex.annotation for ex in examples}
    reports, pooled = _stage("score", score_corpus, ref, hyp, cfg.score.collar)
    _write(os.path.join(out_dir, "der.tsv"), format_der_table(reports, pooled))
    test_refs = _stage("similarity", parse_rttm, os.path.join(test_dir, "ref.rttm"))
    sims = _stage("similarity", compare_corpora, list(ref.values()), list(test_refs.values()))
    _write(os.path.join(out_dir, "similarity.tsv"), format_similarity_report(sims))
    summary = {"der": pooled.der, "overlap_similarity": sims[0].similarity,
               "silence_similarity": sims[1].similarity}
    _write(os.path.join(out_dir, "summary.tsv"),
           f"metric\tkind\tvalue\nder\tALL\t{pooled.der:.4f}\n"
           f"similarity\toverlap\t{sims[0].similarity:.6f}\n"
           f"similarity\tsilence\t{sims[1].similarity:.6f}\n")
    return summary
