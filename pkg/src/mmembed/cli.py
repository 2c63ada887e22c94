"""Command line entry point: one executable, subcommands for each stage.

Exit codes: 0 success, 2 usage or input error, 3 numeric failure.  The
``MMEMBED_LOG`` environment variable sets the logging level.  Every flag
can also come from an optional ``--config`` file of ``key=value`` lines;
explicit flags win.
"""

import argparse
import logging
import os
import sys

import numpy as np

from . import __version__ as VERSION
from . import evaluator, miner, model, textpipe, trainer
from .errors import ConfigError, DataError, InputError, NumericError
from .features import SyntheticSpec, generate_synthetic, load_features
from .trainer import TrainConfig

log = logging.getLogger("mmembed")


def _configure_logging():
    level_name = os.environ.get("MMEMBED_LOG", "warning").strip().lower()
    levels = {"debug": logging.DEBUG, "info": logging.INFO,
              "warning": logging.WARNING, "error": logging.ERROR}
    level = levels.get(level_name)
    if level is None:
        try:
            level = int(level_name)
        except ValueError:
            level = logging.WARNING
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


def _add_common(p):
    p.add_argument("--config", help="key=value file supplying flag defaults")
    p.add_argument("--seed", type=int, default=0, help="root random seed")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="mmembed",
        description="Multimodal word embeddings: train, mine, and evaluate.")
    parser.add_argument("--version", action="version", version=f"mmembed {VERSION}")
    sub = parser.add_subparsers(dest="command", required=True)
    subparsers = {}

    p = sub.add_parser("build-vocab", help="build a vocabulary from a corpus file")
    p.add_argument("--corpus", required=True)
    p.add_argument("--min-count", type=int, default=50)
    p.add_argument("--min-len", type=int, default=textpipe.DEFAULT_MIN_LEN)
    p.add_argument("--overlap-threshold", type=float,
                   default=textpipe.DEFAULT_OVERLAP_THRESHOLD)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_build_vocab)
    subparsers["build-vocab"] = p

    p = sub.add_parser("train", help="train an embedding model")
    p.add_argument("--corpus", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--features", help="visual feature file (required unless --variant text)")
    p.add_argument("--variant", default="a",
                   choices=["text", "a", "a-noshare", "b", "c"])
    p.add_argument("--dim-embed", type=int, default=model.DEFAULT_DIM_EMBED)
    p.add_argument("--dim-state", type=int, default=model.DEFAULT_DIM_STATE)
    p.add_argument("--negatives", type=int, default=model.DEFAULT_NEGATIVES)
    p.add_argument("--lr", type=float, default=1.0)
    p.add_argument("--batch", type=int, default=256)
    p.add_argument("--clip", type=float, default=10.0)
    p.add_argument("--epochs", type=int, default=5)
    p.add_argument("--lambda", dest="lam", type=float, default=1.0)
    p.add_argument("--min-len", type=int, default=textpipe.DEFAULT_MIN_LEN)
    p.add_argument("--overlap-threshold", type=float,
                   default=textpipe.DEFAULT_OVERLAP_THRESHOLD)
    p.add_argument("--val-fraction", type=float, default=0.05)
    p.add_argument("--val-size", type=int, default=None)
    p.add_argument("--eval-interval", type=int, default=100)
    p.add_argument("--patience", type=int, default=3)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--log", help="training log CSV (default: <out>.log.csv)")
    p.set_defaults(func=cmd_train)
    subparsers["train"] = p

    p = sub.add_parser("eval", help="score an embedding on a triplet file")
    p.add_argument("--checkpoint")
    p.add_argument("--embeddings", help="text embedding file (alternative to --checkpoint)")
    p.add_argument("--vocab", help="vocabulary file (required with --checkpoint)")
    p.add_argument("--triplets", required=True)
    p.set_defaults(func=cmd_eval)
    subparsers["eval"] = p

    p = sub.add_parser("mine", help="mine triplets from a clickthrough log")
    p.add_argument("--clicklog", required=True)
    p.add_argument("--annotations", required=True)
    p.add_argument("--pool", required=True, help="negative phrase pool, one per line")
    p.add_argument("--top-k", type=int, default=20)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_mine)
    subparsers["mine"] = p

    p = sub.add_parser("clean", help="apply the majority-vote rule to annotated triplets")
    p.add_argument("--votes", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_clean)
    subparsers["clean"] = p

    p = sub.add_parser("nn", help="nearest neighbors of a word by cosine distance")
    p.add_argument("--embeddings", required=True)
    p.add_argument("--word", required=True)
    p.add_argument("-k", type=int, default=10)
    p.set_defaults(func=cmd_nn)
    subparsers["nn"] = p

    p = sub.add_parser("export", help="export a checkpoint's embedding table as text")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export)
    subparsers["export"] = p

    p = sub.add_parser("synth", help="generate a synthetic ablation dataset")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--concepts", type=int, default=10)
    p.add_argument("--images-per-concept", type=int, default=200)
    p.add_argument("--sentences-per-image", type=int, default=10)
    p.add_argument("--words-per-concept", type=int, default=20)
    p.add_argument("--noise-words", type=int, default=50)
    p.add_argument("--num-triplets", type=int, default=10000)
    p.add_argument("--concept-word-prob", type=float, default=0.6)
    p.add_argument("--block-bits", type=int, default=12)
    p.add_argument("--noise-bits", type=int, default=64)
    p.add_argument("--feature-dim", type=int, default=None)
    p.set_defaults(func=cmd_synth)
    subparsers["synth"] = p

    for sp in subparsers.values():
        _add_common(sp)
    return parser, subparsers


def _read_config_file(path):
    values = {}
    try:
        with open(path, encoding="utf-8") as f:
            for lineno, line in enumerate(f, 1):
                line = line.strip()
                if not line or line.startswith("#"):
                    continue
                if "=" not in line:
                    raise ConfigError(f"{path}:{lineno}: expected key=value")
                key, value = line.split("=", 1)
                values[key.strip().replace("-", "_")] = value.strip()
    except OSError as e:
        raise InputError(f"cannot read config file: {e}") from None
    return values


def _apply_config_file(path, subparsers):
    values = _read_config_file(path)
    recognized = set()
    for sp in subparsers.values():
        for action in sp._actions:
            if action.dest in values and action.option_strings:
                raw = values[action.dest]
                try:
                    converted = action.type(raw) if action.type else raw
                except (TypeError, ValueError):
                    raise ConfigError(
                        f"config key {action.dest}: bad value {raw!r}") from None
                if action.choices and converted not in action.choices:
                    raise ConfigError(
                        f"config key {action.dest}: {raw!r} not in {action.choices}")
                sp.set_defaults(**{action.dest: converted})
                recognized.add(action.dest)
    unknown = set(values) - recognized - {"config"}
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")


def _extract_config_path(argv):
    for i, tok in enumerate(argv):
        if tok == "--config" and i + 1 < len(argv):
            return argv[i + 1]
        if tok.startswith("--config="):
            return tok.split("=", 1)[1]
    return None


def cmd_build_vocab(args):
    records = textpipe.prepare_corpus(args.corpus, args.min_len, args.overlap_threshold)
    vocab = textpipe.build_vocab((tokens for _, tokens in records), args.min_count)
    vocab.save(args.out)
    print(f"kept {len(records)} sentences; vocabulary size {len(vocab)} "
          f"({len(vocab) - vocab.n_reserved} words + {vocab.n_reserved} reserved) -> {args.out}")
    return 0


def cmd_train(args):
    variant = model.canonical_variant(args.variant)
    vocab = textpipe.Vocabulary.load(args.vocab)
    records = textpipe.prepare_corpus(args.corpus, args.min_len, args.overlap_threshold)
    features = None
    if variant != "text":
        if not args.features:
            raise InputError(f"variant {args.variant!r} requires --features")
        features = load_features(args.features)
    config = TrainConfig(
        variant=variant, dim_embed=args.dim_embed, dim_state=args.dim_state,
        negatives=args.negatives, lr=args.lr, batch_size=args.batch,
        clip_norm=args.clip, max_epochs=args.epochs, lam=args.lam,
        seed=args.seed, val_fraction=args.val_fraction, val_size=args.val_size,
        eval_interval=args.eval_interval, patience=args.patience,
        threads=args.threads)
    result = trainer.train(records, features, vocab, config)
    trainer.save_checkpoint(args.out, result.params, config, vocab.sha256(),
                            result.best_step, result.best_val)
    log_path = args.log or args.out + ".log.csv"
    with open(log_path, "w", encoding="utf-8") as f:
        f.write(result.log_csv())
    best = "n/a" if not np.isfinite(result.best_val) else f"{result.best_val:.4f}"
    print(f"trained {result.steps} steps; best validation loss {best} "
          f"at step {result.best_step}; checkpoint -> {args.out}; log -> {log_path}")
    return 0


def _load_index(args):
    if bool(args.checkpoint) == bool(args.embeddings):
        raise InputError("give exactly one of --checkpoint or --embeddings")
    if args.checkpoint:
        if not args.vocab:
            raise InputError("--checkpoint needs --vocab to map words to rows")
        params, header = trainer.load_checkpoint(args.checkpoint)
        vocab = textpipe.Vocabulary.load(args.vocab)
        if header.get("vocab_sha256") and header["vocab_sha256"] != vocab.sha256():
            raise DataError(
                f"vocabulary {args.vocab} does not match the one this "
                f"checkpoint was trained with")
        return evaluator.EmbeddingIndex.from_params(params, vocab)
    words, vectors = model.load_embeddings(args.embeddings)
    return evaluator.EmbeddingIndex(words, vectors)


def cmd_eval(args):
    index = _load_index(args)
    triplets = evaluator.load_triplets(args.triplets)
    if not triplets:
        raise InputError(f"triplet file is empty: {args.triplets}")
    report = evaluator.evaluate(triplets, index)
    print(report.render_text())
    print()
    print(report.render_kv())
    return 0


def cmd_mine(args):
    click_log = miner.load_click_log(args.clicklog)
    annotations = miner.load_annotations(args.annotations)
    pool = miner.load_pool(args.pool)
    triplets = miner.mine(click_log, annotations, pool, args.top_k, args.seed)
    evaluator.write_triplets(args.out, triplets)
    print(f"mined {len(triplets)} triplets from "
          f"{len({r.query for r in click_log})} queries -> {args.out}")
    return 0


def cmd_clean(args):
    records = miner.load_votes(args.votes)
    accepted, diagnostics = miner.aggregate_votes(records)
    for lineno, message in diagnostics:
        print(f"{args.votes}:{lineno}: {message}", file=sys.stderr)
    evaluator.write_triplets(args.out, accepted)
    print(f"accepted {len(accepted)} of {len(records)} triplets -> {args.out}")
    return 0


def cmd_nn(args):
    words, vectors = model.load_embeddings(args.embeddings)
    index = evaluator.EmbeddingIndex(words, vectors)
    neighbors = evaluator.nearest_neighbors(index, args.word, args.k)
    if neighbors is None:
        raise InputError(f"word {args.word!r} not in {args.embeddings}")
    for word, distance in neighbors:
        print(f"{word}\t{distance:.6f}")
    return 0


def cmd_export(args):
    params, header = trainer.load_checkpoint(args.checkpoint)
    vocab = textpipe.Vocabulary.load(args.vocab)
    if header.get("vocab_sha256") and header["vocab_sha256"] != vocab.sha256():
        raise DataError(f"vocabulary {args.vocab} does not match the checkpoint")
    model.export_embeddings(args.out, params, vocab)
    print(f"exported {params.vocab_size} x {params.dim_embed} embeddings -> {args.out}")
    return 0


def cmd_synth(args):
    spec = SyntheticSpec(
        num_concepts=args.concepts, images_per_concept=args.images_per_concept,
        sentences_per_image=args.sentences_per_image,
        words_per_concept=args.words_per_concept,
        vocab_noise_words=args.noise_words, num_triplets=args.num_triplets,
        seed=args.seed, concept_word_prob=args.concept_word_prob,
        block_bits=args.block_bits, noise_bits=args.noise_bits,
        feature_dim=args.feature_dim)
    corpus, features, triplets = generate_synthetic(spec, args.out)
    print(f"wrote {corpus}, {features}, {triplets}")
    return 0


def main(argv=None):
    _configure_logging()
    argv = list(sys.argv[1:] if argv is None else argv)
    parser, subparsers = build_parser()
    try:
        config_path = _extract_config_path(argv)
        if config_path:
            _apply_config_file(config_path, subparsers)
        try:
            args = parser.parse_args(argv)
        except SystemExit as e:
            return int(e.code or 0)
        return args.func(args) or 0
    except NumericError as e:
        print(f"mmembed: numeric failure: {e}", file=sys.stderr)
        return 3
    except (InputError, OSError) as e:
        print(f"mmembed: error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
