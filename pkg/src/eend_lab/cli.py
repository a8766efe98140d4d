"""``eend-lab`` command line.

Exit codes: 0 success, 1 input/parse errors, 2 configuration/usage errors.
"""

import argparse
import logging
import os
import sys

from eend_lab.config import load_config
from eend_lab.encoder.config import toy_config
from eend_lab.encoder.gradcheck import check_model_gradients
from eend_lab.encoder.params import (count_parameters, format_ledger, load_checkpoint,
                                     save_checkpoint)
from eend_lab.errors import ConfigurationError, EendError, InputError
from eend_lab.features import load_wav
from eend_lab.pipeline import (featurize_dir, jobs_from_env, load_examples, pipeline_smoke,
                               smoke_config, write_dataset)
from eend_lab.scoring import emit_rttm, format_der_table, parse_rttm, score_corpus
from eend_lab.simulator import (build_pool, corpus_stats, format_stats, pool_from_waveforms,
                                simulate_corpus)
from eend_lab.synth import synthetic_pool_waveforms
from eend_lab.training import (average_checkpoints, finetune_grid, finetune_grid_configs,
                               format_finetune_report, infer, train)
from eend_lab.turntaking import compare_corpora, format_similarity_report

log = logging.getLogger("eend_lab")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        sys.exit(2)


def _config(args):
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.with_seed(args.seed)
    return cfg


def _out(args, default="."):
    out = args.out or default
    os.makedirs(out, exist_ok=True)
    return out


def _write(path, text):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def cmd_featurize(args):
    cfg = _config(args)
    out = args.out or args.data
    cfg.echo(out)
    names = featurize_dir(args.data, out, cfg.feature.n_mels, args.jobs)
    print(f"featurized {len(names)} recordings into {os.path.join(out, 'feats')}")


def cmd_simulate(args):
    cfg = _config(args)
    out = _out(args)
    cfg.echo(out)
    sim = cfg.sim
    if args.manifest:
        pool = build_pool(args.manifest, sim.min_utt_len)
    else:
        pool = pool_from_waveforms(synthetic_pool_waveforms(cfg.seed), sim.min_utt_len)
    noise = [load_wav(p) for p in args.noise or []]
    rirs = [load_wav(p).samples for p in args.rir or []]
    n = args.n if args.n is not None else sim.n_mixtures
    recordings = simulate_corpus(pool, sim, n, noise, rirs, prefix=args.prefix)
    write_dataset(out, recordings, args.prefix, sim.min_utt_len)
    print(f"simulated {len(recordings)} mixtures into {out}")


def cmd_stats(args):
    annotations = []
    for path in args.rttm:
        annotations.extend(parse_rttm(path).values())
    text = format_stats(corpus_stats(annotations), args.name, args.min_length)
    sys.stdout.write(text)
    if args.out:
        _write(os.path.join(_out(args), "stats.tsv"), text)


def cmd_similarity(args):
    train_anns = list(parse_rttm(args.train).values())
    test_anns = list(parse_rttm(args.test).values())
    reports = compare_corpora(train_anns, test_anns, args.gamma, args.bin_width)
    text = format_similarity_report(reports)
    sys.stdout.write(text)
    if args.out:
        _write(os.path.join(_out(args), "similarity.tsv"), text)


def cmd_train(args):
    cfg = _config(args)
    out = _out(args)
    cfg.echo(out)
    enc = cfg.encoder_config()
    examples = load_examples(args.data, enc, cfg.feature.n_mels)
    init = load_checkpoint(args.init) if args.init else None
    result = train(examples, enc, cfg.train, init=init, out_dir=os.path.join(out, "checkpoints"),
                   augment=cfg.feature.augment())
    _write(os.path.join(out, "train.log"), result.log_text())
    save_checkpoint(os.path.join(out, "final.ckpt"), result.params)
    save_checkpoint(os.path.join(out, "averaged.ckpt"), result.averaged())
    last = result.log[-1][2] if result.log else float("nan")
    print(f"trained {len(result.log)} steps; final loss {last:.6g}")


def cmd_average(args):
    avg = average_checkpoints(args.checkpoints)
    out = _out(args)
    path = os.path.join(out, "averaged.ckpt")
    save_checkpoint(path, avg)
    print(path)


def cmd_finetune(args):
    cfg = _config(args)
    out = _out(args)
    cfg.echo(out)
    base = load_checkpoint(args.base)
    adapt = load_examples(args.adapt, base.config, cfg.feature.n_mels)
    dev = load_examples(args.dev, base.config, cfg.feature.n_mels)
    configs = finetune_grid_configs(cfg.train.batch_size, cfg.train.finetune_epochs, cfg.seed)
    results = finetune_grid(base, adapt, dev, collar=cfg.score.collar, configs=configs)
    text = format_finetune_report(results)
    _write(os.path.join(out, "finetune.tsv"), text)
    save_checkpoint(os.path.join(out, "best.ckpt"), results[0].params)
    sys.stdout.write(text)


def cmd_infer(args):
    cfg = _config(args)
    params = load_checkpoint(args.checkpoint)
    examples = load_examples(args.data, params.config, cfg.feature.n_mels, need_reference=False)
    hyp = infer(params, examples, cfg.score.threshold, cfg.score.median_window)
    out = _out(args)
    path = os.path.join(out, "hyp.rttm")
    _write(path, emit_rttm(hyp))
    print(path)


def cmd_score(args):
    cfg = _config(args)
    collar = args.collar if args.collar is not None else cfg.score.collar
    if collar < 0:
        raise ConfigurationError(f"collar must be >= 0, got {collar}")
    reports, pooled = score_corpus(parse_rttm(args.ref), parse_rttm(args.hyp), collar,
                                   args.skip_missing)
    text = format_der_table(reports, pooled)
    sys.stdout.write(text)
    if args.out:
        _write(os.path.join(_out(args), "der.tsv"), text)


def cmd_gradcheck(args):
    seed = args.seed if args.seed is not None else 0
    worst = 0.0
    for arch in ("transformer", "conformer"):
        for frontend in ("conv_subsample", "stacked"):
            report = check_model_gradients(toy_config(arch, frontend), seed)
            worst = max(worst, report.max_relative_error)
            print(f"{arch}\t{frontend}\t{report.n_parameters}\t{report.max_relative_error:.3e}"
                  f"\t{report.worst_parameter}\trefined={report.n_refined}")
    print(f"max_relative_error\t{worst:.3e}")
    return 0 if worst <= 1e-4 else 1


def cmd_paramcount(args):
    cfg = _config(args)
    enc = cfg.encoder_config()
    if args.ledger:
        sys.stdout.write(format_ledger(enc))
    print(count_parameters(enc))


def cmd_smoke(args):
    cfg = _config(args) if args.config else smoke_config(args.seed or 0)
    seed = cfg.seed
    summary = pipeline_smoke(_out(args, "smoke"), seed, cfg)
    for key, value in summary.items():
        print(f"{key}\t{value:.6g}")


def build_parser():
    parser = _Parser(prog="eend-lab", description=__doc__.splitlines()[0])
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration")
    common.add_argument("--seed", type=int, help="overrides the config seed")
    common.add_argument("--out", help="output directory")
    common.add_argument("--jobs", type=int, default=None,
                        help="worker threads (default: $EEND_LAB_JOBS or 1)")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("featurize", parents=[common], help="log-Mel features for a data dir")
    p.add_argument("--data", required=True)
    p.set_defaults(func=cmd_featurize)

    p = sub.add_parser("simulate", parents=[common], help="simulate two-speaker mixtures")
    p.add_argument("--manifest", help="speaker<TAB>wav<TAB>duration (default: bundled synthetic pool)")
    p.add_argument("--noise", nargs="*", help="noise WAV files")
    p.add_argument("--rir", nargs="*", help="room impulse response WAV files")
    p.add_argument("--n", type=int, help="number of mixtures (default: sim.n_mixtures)")
    p.add_argument("--prefix", default="mix")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("stats", parents=[common], help="corpus turn-taking statistics")
    p.add_argument("rttm", nargs="+")
    p.add_argument("--name", default="data")
    p.add_argument("--min-length", type=float, default=0.0)
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("similarity", parents=[common], help="overlap/silence similarity")
    p.add_argument("--train", required=True, help="RTTM of the source corpus")
    p.add_argument("--test", required=True, help="RTTM of the target corpus")
    p.add_argument("--gamma", type=float, default=0.01)
    p.add_argument("--bin-width", type=float, default=None)
    p.set_defaults(func=cmd_similarity)

    p = sub.add_parser("train", parents=[common], help="train a model on a data dir")
    p.add_argument("--data", required=True)
    p.add_argument("--init", help="initial checkpoint")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("average", parents=[common], help="average checkpoints")
    p.add_argument("checkpoints", nargs="+")
    p.set_defaults(func=cmd_average)

    p = sub.add_parser("finetune", parents=[common], help="fine-tuning hyperparameter grid")
    p.add_argument("--base", required=True)
    p.add_argument("--adapt", required=True)
    p.add_argument("--dev", required=True)
    p.set_defaults(func=cmd_finetune)

    p = sub.add_parser("infer", parents=[common], help="diarize a data dir")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("score", parents=[common], help="DER of hypothesis vs reference RTTM")
    p.add_argument("--ref", required=True)
    p.add_argument("--hyp", required=True)
    p.add_argument("--collar", type=float, default=None)
    p.add_argument("--skip-missing", action="store_true")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient check")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("paramcount", parents=[common], help="parameter count of a config")
    p.add_argument("--ledger", action="store_true", help="print the per-tensor ledger")
    p.set_defaults(func=cmd_paramcount)

    p = sub.add_parser("smoke", parents=[common], help="end-to-end smoke pipeline")
    p.set_defaults(func=cmd_smoke)
    return parser


def main(argv=None):
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else argv
    if not argv:
        parser.print_help(sys.stderr)
        return 2
    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_help(sys.stderr)
        return 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    if args.jobs is None:
        args.jobs = jobs_from_env()
    try:
        code = args.func(args)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except InputError as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return 1
    except EendError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return code or 0


if __name__ == "__main__":
    sys.exit(main())
