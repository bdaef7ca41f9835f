"""Command-line entry point: ``signgan <command> ...``.

Errors print one line to stderr::

    signgan: error code=<int> kind=<name> msg=<JSON string>

Exit codes:

    0  success
    1  internal error
    2  usage error (unknown flag, missing argument)
    3  invalid config
    4  data or file error
    5  checkpoint error
    6  non-finite value during training
    7  gradient check failure
    8  vocabulary error or unrenderable text
    9  metric error
"""
from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_USAGE = 2
EXIT_CONFIG = 3
EXIT_DATA = 4
EXIT_CHECKPOINT = 5
EXIT_NONFINITE = 6
EXIT_GRADCHECK = 7
EXIT_VOCAB = 8
EXIT_METRIC = 9


class CliError(Exception):
    def __init__(self, code, kind, msg):
        super().__init__(msg)
        self.code, self.kind, self.msg = code, kind, msg


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError(EXIT_USAGE, "usage", message)


def _emit_error(err: CliError):
    sys.stderr.write(f"signgan: error code={err.code} kind={err.kind} msg={json.dumps(err.msg)}\n")


def _classify(exc):
    """Map library exceptions onto (exit code, kind)."""
    from .autodiff import NonFiniteError
    from .checkpoint import CheckpointError
    from .config import ConfigError
    from .data import DatasetError
    from .metrics import MetricError
    from .text2sign import UnrenderableError, VocabularyError

    table = [
        (ConfigError, EXIT_CONFIG, "config"),
        (CheckpointError, EXIT_CHECKPOINT, "checkpoint"),
        (NonFiniteError, EXIT_NONFINITE, "nonfinite"),
        (UnrenderableError, EXIT_VOCAB, "unrenderable"),
        (VocabularyError, EXIT_VOCAB, "vocabulary"),
        (MetricError, EXIT_METRIC, "metric"),
        (DatasetError, EXIT_DATA, "data"),
        (OSError, EXIT_DATA, "io"),
    ]
    for cls, code, kind in table:
        if isinstance(exc, cls):
            return code, kind
    return EXIT_INTERNAL, "internal"


# ---------------------------------------------------------------- helpers

def _png_files(root):
    if not os.path.isdir(root):
        raise CliError(EXIT_DATA, "data", f"not a directory: {root}")
    out = []
    for dirpath, _, files in os.walk(root):
        out.extend(os.path.join(dirpath, f) for f in files if f.lower().endswith(".png"))
    if not out:
        raise CliError(EXIT_DATA, "data", f"no PNG files under {root}")
    return sorted(out)


def _read_images(root):
    from .data import read_png
    imgs = []
    for path in _png_files(root):
        try:
            imgs.append(read_png(path))
        except Exception as exc:
            raise CliError(EXIT_DATA, "data", f"cannot decode {path}: {exc}") from exc
    if len({im.shape for im in imgs}) != 1:
        raise CliError(EXIT_DATA, "data", f"images under {root} have mixed shapes")
    return np.stack(imgs)


def _vocab(path=None, container=None):
    from .text2sign import ClassVocabulary
    if path:
        return ClassVocabulary.from_file(path)
    extra = container.meta.get("extra", {}) if container is not None else {}
    if "vocab" in extra:
        return ClassVocabulary([tuple(e) for e in extra["vocab"]])
    return ClassVocabulary.desk()


# ---------------------------------------------------------------- commands

def cmd_make_data(args):
    from .data import make_synthetic_dataset
    spec = make_synthetic_dataset(args.out, args.classes, args.per_class, args.resolution, args.seed)
    print(f"wrote {args.classes * args.per_class} images classes={','.join(spec.class_names)} root={spec.root}")


def cmd_train(args):
    from .config import load_config
    from .data import load_dataset
    from .networks import build_networks
    from .training import Trainer, load_checkpoint, save_checkpoint

    cfg = load_config(args.config)
    vocab = _vocab(cfg.vocab)
    data = load_dataset(cfg.dataset, vocab.class_names)
    os.makedirs(cfg.out_dir, exist_ok=True)
    log_path = os.path.join(cfg.out_dir, "metrics.log")
    meta = {"vocab": [list(e) for e in vocab.entries], "run_config": cfg.to_dict()}
    if args.resume:
        log = open(log_path, "a", encoding="utf-8")
        trainer = load_checkpoint(args.resume, data, log)
    else:
        log = open(log_path, "w", encoding="utf-8")
        G, D = build_networks(cfg.net_config(len(vocab)), cfg.seed)
        trainer = Trainer(G, D, data, cfg.wgan_config(), cfg.max_stage, cfg.seed, log)
    with log:
        while trainer.state.step < cfg.steps:
            trainer.progressive_step()
            st = trainer.state
            if cfg.checkpoint_every and st.step % cfg.checkpoint_every == 0:
                save_checkpoint(trainer, os.path.join(cfg.out_dir, f"step_{st.step:06d}.ckpt"), meta)
    final = os.path.join(cfg.out_dir, "final.ckpt")
    save_checkpoint(trainer, final, meta)
    st = trainer.state
    print(f"trained steps={st.step} stage={st.stage} alpha={st.alpha} checkpoint={final}")


def cmd_train_classifier(args):
    from .data import load_dataset
    from .metrics import save_classifier, train_desk_classifier

    vocab = _vocab(args.vocab)
    data = load_dataset(args.data, vocab.class_names)
    clf = train_desk_classifier(data, epochs=args.epochs, seed=args.seed)
    save_classifier(clf, args.out)
    print(f"heldout_accuracy={clf.heldout_accuracy} classifier={args.out}")


def cmd_generate(args):
    from . import checkpoint
    from .training import load_networks
    from .text2sign import generate_sequence

    c = checkpoint.read(args.checkpoint)
    G, _ = load_networks(c)
    vocab = _vocab(args.vocab, c)
    entries = generate_sequence(args.sentence, G, args.stage, args.seed, args.out, vocab)
    print(f"generated entries={len(entries)} manifest={os.path.join(args.out, 'manifest.json')}")


def cmd_evaluate(args):
    from . import metrics

    if not (args.fid or args.inception or args.bleu):
        raise CliError(EXIT_USAGE, "usage", "evaluate needs --fid, --is or --bleu")
    clf = metrics.load_classifier(args.classifier) if args.classifier else None

    if args.fid:
        extractor = clf if clf is not None else metrics.PixelFeatures()
        dir_a, dir_b = args.fid
        if args.stats_cache and os.path.exists(args.stats_cache):
            stats_a = metrics.load_stats(args.stats_cache)
        else:
            stats_a = metrics.gaussian_stats(extractor.features(_read_images(dir_a)))
            if args.stats_cache:
                metrics.save_stats(args.stats_cache, stats_a)
        stats_b = metrics.gaussian_stats(extractor.features(_read_images(dir_b)))
        print(f"fid={metrics.fid(stats_a, stats_b)!r}")

    if args.inception:
        if clf is None:
            raise CliError(EXIT_USAGE, "usage", "--is requires --classifier")
        mean, std = metrics.inception_score(clf.predict_proba(_read_images(args.inception)), args.splits)
        print(f"is_mean={mean!r} is_std={std!r}")

    if args.bleu:
        from . import checkpoint
        from .training import load_networks
        from .text2sign import roundtrip_bleu

        if clf is None or not args.checkpoint or args.stage is None:
            raise CliError(EXIT_USAGE, "usage", "--bleu requires --classifier, --checkpoint and --stage")
        with open(args.bleu, encoding="utf-8") as fh:
            text = fh.read()
        c = checkpoint.read(args.checkpoint)
        G, _ = load_networks(c)
        res = roundtrip_bleu(text, G, clf, _vocab(args.vocab, c), args.stage, args.seed)
        print(" ".join(f"bleu{n}={s!r}" for n, s in enumerate(res.scores, 1)))


def cmd_gradcheck(args):
    from .gradcheck import run_suite

    results = run_suite(points=args.points, seed=args.seed)
    for r in results:
        print(r.format())
    worst = max(results, key=lambda r: r.error / r.tol)
    ok = all(r.passed for r in results)
    print(f"checks={len(results)} passed={sum(r.passed for r in results)} worst={worst.name} "
          f"max_rel_err={worst.error:.3e}")
    if not ok:
        raise CliError(EXIT_GRADCHECK, "gradcheck", f"{sum(not r.passed for r in results)} checks failed")


# ------------------------------------------------------------------ parser

def build_parser():
    p = _Parser(prog="signgan", description="Class-conditional progressive GAN toolkit.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("make-data", help="write the synthetic shape dataset")
    s.add_argument("--out", required=True)
    s.add_argument("--classes", type=int, default=3)
    s.add_argument("--per-class", type=int, default=500)
    s.add_argument("--resolution", type=int, default=32)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_make_data)

    s = sub.add_parser("train", help="run WGAN-GP progressive training from a config file")
    s.add_argument("--config", required=True)
    s.add_argument("--resume", help="training checkpoint to continue from")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("train-classifier", help="fit the desk classifier used by evaluate")
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--epochs", type=int, default=8)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--vocab")
    s.set_defaults(func=cmd_train_classifier)

    s = sub.add_parser("generate", help="render a sentence as a sign image sequence")
    s.add_argument("--sentence", required=True)
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--stage", type=int, required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--vocab")
    s.set_defaults(func=cmd_generate)

    s = sub.add_parser("evaluate", help="IS / FID on image directories, BLEU round trip on text")
    s.add_argument("--fid", nargs=2, metavar=("REAL_DIR", "FAKE_DIR"))
    s.add_argument("--is", dest="inception", metavar="DIR")
    s.add_argument("--bleu", metavar="TEXT_FILE")
    s.add_argument("--classifier")
    s.add_argument("--stats-cache")
    s.add_argument("--splits", type=int, default=1)
    s.add_argument("--checkpoint")
    s.add_argument("--stage", type=int)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--vocab")
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("gradcheck", help="run the finite-difference gradient suite")
    s.add_argument("--points", type=int, default=3)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_gradcheck)
    return p


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
        args.func(args)
        return EXIT_OK
    except CliError as err:
        _emit_error(err)
        return err.code
    except Exception as exc:  # every failure becomes one parseable line
        code, kind = _classify(exc)
        _emit_error(CliError(code, kind, f"{type(exc).__name__}: {exc}"))
        return code


if __name__ == "__main__":
    sys.exit(main())
