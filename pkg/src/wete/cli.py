"""Command-line interface: ``wete {train,eval,topics,infer,nearest}``.

Settings come from built-in defaults, then an optional ``key = value``
config file (``--config``), then command-line flags. Exit codes: 0 success,
1 usage or config error, 2 I/O error, 3 numerical divergence.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .corpus import attach_labels, build_corpus, encode_with_vocab, read_lines, read_stopwords
from .embeddings import load_text_embeddings, nearest_words
from .evaluation import evaluate_model
from .metrics import format_report, report_json
from .model import CheckpointError, ModelConfig, WeTeModel, load_checkpoint, save_checkpoint, top_words
from .training import TrainConfig, TrainingDiverged, theta_matrix, train

log = logging.getLogger("wete")

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_DIVERGED = 0, 1, 2, 3


class ConfigError(Exception):
    pass


class DataIOError(Exception):
    pass


# key -> (type, default)
SETTINGS = {
    "mode": (str, "fixed"),
    "topics": (int, 100),
    "embed_dim": (int, 100),
    "trunk_width": (int, 256),
    "epsilon": (float, 1.0),
    "batch_size": (int, 200),
    "epochs": (int, 50),
    "lr": (float, 0.001),
    "seed": (int, 0),
    "min_doc_len": (int, 1),
    "min_term_doc_freq": (int, 1),
    "input_transform": (str, "log1p"),
    "oov_stddev": (float, 0.02),
    "n_clusters": (int, 0),
    "kmeans_restarts": (int, 10),
    "corpus": (str, None),
    "labels": (str, None),
    "test_corpus": (str, None),
    "test_labels": (str, None),
    "stopwords": (str, None),
    "embeddings": (str, None),
    "checkpoint": (str, None),
    "output_dir": (str, "."),
}
INPUT_PATHS = ("corpus", "labels", "test_corpus", "test_labels", "stopwords", "embeddings")


def parse_config_file(path) -> dict:
    """Read ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    try:
        lines = read_lines(path)
    except OSError as err:
        raise DataIOError(f"cannot read config {path}: {err}") from None
    for lineno, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep or not key:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        if key not in SETTINGS:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        out[key] = value
    return out


def resolve_settings(file_values: dict, flag_values: dict) -> dict:
    """Merge defaults < config file < flags and convert types."""
    merged = {k: default for k, (_, default) in SETTINGS.items()}
    for source in (file_values, flag_values):
        for key, value in source.items():
            if value is None:
                continue
            if key not in SETTINGS:
                raise ConfigError(f"unknown setting {key!r}")
            kind = SETTINGS[key][0]
            try:
                merged[key] = kind(value)
            except ValueError:
                raise ConfigError(f"{key}: cannot read {value!r} as {kind.__name__}") from None
    return merged


def validate_paths(settings, required=(), checkpoint_must_exist=False):
    for key in required:
        if not settings.get(key):
            raise ConfigError(f"missing required setting {key!r}")
    for key in INPUT_PATHS:
        path = settings.get(key)
        if path and not os.path.isfile(path):
            raise DataIOError(f"{key}: no such file {path}")
    ckpt = settings.get("checkpoint")
    if checkpoint_must_exist and not (ckpt and os.path.isfile(ckpt)):
        raise DataIOError(f"checkpoint: no such file {ckpt}")
    out = Path(settings["output_dir"])
    if out.exists() and not out.is_dir():
        raise DataIOError(f"output_dir {out} is not a directory")


def _load_reference(settings):
    stop = read_stopwords(settings["stopwords"]) if settings["stopwords"] else ()
    corpus = build_corpus(read_lines(settings["corpus"]), settings["min_doc_len"],
                          settings["min_term_doc_freq"], stop)
    if settings["labels"]:
        corpus = attach_labels(corpus, read_lines(settings["labels"]))
    return corpus


def check_vocab(expected, actual):
    if expected.terms == actual.terms:
        return
    for i, (a, b) in enumerate(zip(expected.terms, actual.terms)):
        if a != b:
            raise ConfigError(f"vocabulary mismatch at id {i}: checkpoint has {a!r}, corpus has {b!r}")
    longer, which = ((expected, "checkpoint") if len(expected) > len(actual) else (actual, "corpus"))
    i = min(len(expected), len(actual))
    raise ConfigError(f"vocabulary mismatch at id {i}: only the {which} has {longer.terms[i]!r}")


def _mapped_corpus(path, labels_path, vocab, settings):
    corpus = encode_with_vocab(read_lines(path), vocab, settings["min_doc_len"])
    if labels_path:
        corpus = attach_labels(corpus, read_lines(labels_path))
    return corpus


def _checkpoint_path(settings):
    return settings["checkpoint"] or os.path.join(settings["output_dir"], "model.wete")


def _fmt(x):
    return f"{x:.6g}"


# ---------------------------------------------------------------------------
# commands


def cmd_train(settings):
    if settings["mode"] not in ("fixed", "finetune", "scratch"):
        raise ConfigError(f"mode must be fixed, finetune or scratch, not {settings['mode']!r}")
    if settings["mode"] != "scratch" and not settings["embeddings"]:
        raise ConfigError(f"mode {settings['mode']} needs an embeddings file")
    validate_paths(settings, required=("corpus",))
    os.makedirs(settings["output_dir"], exist_ok=True)

    corpus = _load_reference(settings)
    embeddings = None
    if settings["mode"] != "scratch":
        embeddings, coverage = load_text_embeddings(settings["embeddings"], corpus.vocab,
                                                    settings["oov_stddev"], settings["seed"])
        log.info("embeddings cover %d of %d terms", coverage.found, len(corpus.vocab))
    config = ModelConfig(n_topics=settings["topics"], embed_dim=settings["embed_dim"],
                         epsilon=settings["epsilon"], mode=settings["mode"],
                         trunk_width=settings["trunk_width"],
                         input_transform=settings["input_transform"], seed=settings["seed"])
    model = WeTeModel.initialize(corpus.vocab, config, embeddings)
    cfg = TrainConfig(batch_size=settings["batch_size"], epochs=settings["epochs"],
                      lr=settings["lr"], seed=settings["seed"])
    log_path = os.path.join(settings["output_dir"], "train_log.csv")
    ckpt = _checkpoint_path(settings)

    with open(log_path, "a", encoding="utf-8") as fh:
        def on_epoch(rec, _model):
            fh.write(rec.csv() + "\n")
            fh.flush()

        try:
            train(corpus, model, cfg, on_epoch)
        except TrainingDiverged as err:
            save_checkpoint(ckpt, err.last_good)
            log.error("%s; last good model written to %s", err, ckpt)
            return EXIT_DIVERGED
    save_checkpoint(ckpt, model)
    log.info("checkpoint written to %s", ckpt)
    return EXIT_OK


def cmd_eval(settings):
    validate_paths(settings, required=("corpus",), checkpoint_must_exist=True)
    model = load_checkpoint(settings["checkpoint"])
    reference = _load_reference(settings)
    check_vocab(model.vocab, reference.vocab)
    test = None
    if settings["test_corpus"]:
        test = _mapped_corpus(settings["test_corpus"], settings["test_labels"], model.vocab, settings)
    report = evaluate_model(model, reference, test, n_clusters=settings["n_clusters"] or None,
                            restarts=settings["kmeans_restarts"], seed=settings["seed"])
    os.makedirs(settings["output_dir"], exist_ok=True)
    text = format_report(report)
    Path(settings["output_dir"], "metrics.txt").write_text(text, encoding="utf-8")
    Path(settings["output_dir"], "metrics.json").write_text(report_json(report), encoding="utf-8")
    sys.stdout.write(text)
    return EXIT_OK


def cmd_topics(settings, n_words):
    validate_paths(settings, checkpoint_must_exist=True)
    model = load_checkpoint(settings["checkpoint"])
    Phi = model.topic_word_dist()
    if not 1 <= n_words <= Phi.shape[0]:
        raise ConfigError(f"n_words must be between 1 and the vocabulary size {Phi.shape[0]}")
    for k in range(Phi.shape[1]):
        words = " ".join(model.vocab.terms[i] for i in top_words(Phi, k, n_words))
        sys.stdout.write(f"{k}: {words}\n")
    return EXIT_OK


def cmd_infer(settings, out_path, map_to_vocab):
    validate_paths(settings, required=("corpus",), checkpoint_must_exist=True)
    model = load_checkpoint(settings["checkpoint"])
    if map_to_vocab:
        corpus = _mapped_corpus(settings["corpus"], None, model.vocab, settings)
    else:
        corpus = _load_reference(settings)
        check_vocab(model.vocab, corpus.vocab)
    theta = theta_matrix(corpus, model)
    out_path = out_path or os.path.join(settings["output_dir"], "theta.csv")
    os.makedirs(os.path.dirname(os.path.abspath(out_path)), exist_ok=True)
    # 6 significant digits cannot keep row sums within 1e-6 for large K
    np.savetxt(out_path, theta, fmt="%.10g", delimiter=",")
    log.info("wrote %d x %d topic proportions to %s", *theta.shape, out_path)
    return EXIT_OK


def cmd_nearest(settings, query, k):
    validate_paths(settings, checkpoint_must_exist=True)
    model = load_checkpoint(settings["checkpoint"])
    if query not in model.vocab:
        raise ConfigError(f"{query!r} is not in the vocabulary")
    if not 1 <= k <= len(model.vocab):
        raise ConfigError(f"k must be between 1 and {len(model.vocab)}")
    for i, sim in nearest_words(model.params["word_embeddings"], model.vocab[query], k):
        sys.stdout.write(f"{model.vocab.terms[i]} {_fmt(sim)}\n")
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing


def _add_settings(parser):
    parser.add_argument("--config", help="key = value settings file")
    for key, (kind, _) in SETTINGS.items():
        parser.add_argument("--" + key.replace("_", "-"), dest=key, default=None, type=str,
                            metavar=kind.__name__.upper())


def build_parser():
    parser = argparse.ArgumentParser(prog="wete", description=__doc__.splitlines()[0])
    parser.add_argument("-q", "--quiet", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("train", help="train a model and write a checkpoint")
    _add_settings(p)
    p = sub.add_parser("eval", help="topic-quality and clustering metrics")
    _add_settings(p)
    p = sub.add_parser("topics", help="top words of every topic")
    _add_settings(p)
    p.add_argument("--n-words", type=int, default=10)
    p = sub.add_parser("infer", help="topic proportions for every document, as CSV")
    _add_settings(p)
    p.add_argument("--out", help="CSV path (default OUTPUT_DIR/theta.csv)")
    p.add_argument("--map-to-vocab", action="store_true",
                   help="map the corpus onto the checkpoint vocabulary, dropping unknown tokens")
    p = sub.add_parser("nearest", help="nearest words by cosine similarity")
    _add_settings(p)
    p.add_argument("query")
    p.add_argument("-k", type=int, default=8)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(message)s")
    try:
        file_values = parse_config_file(args.config) if args.config else {}
        flags = {k: getattr(args, k) for k in SETTINGS}
        settings = resolve_settings(file_values, flags)
        log.info("effective config: %s", " ".join(f"{k}={v}" for k, v in settings.items()))
        if args.command == "train":
            return cmd_train(settings)
        if args.command == "eval":
            return cmd_eval(settings)
        if args.command == "topics":
            return cmd_topics(settings, args.n_words)
        if args.command == "infer":
            return cmd_infer(settings, args.out, args.map_to_vocab)
        return cmd_nearest(settings, args.query, args.k)
    except ConfigError as err:
        log.error("%s", err)
        return EXIT_CONFIG
    except (DataIOError, CheckpointError, OSError) as err:
        log.error("%s", err)
        return EXIT_IO
    except ValueError as err:
        log.error("%s", err)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
