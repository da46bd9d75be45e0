"""Command-line entry point: ``mlta <command> [flags]``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Sequence

from .dataset import encode
from .embedding import EmbeddingTable, load_table, vocabulary, write_table
from .errors import DataError, NumericalError, ParseError
from .evaluation import ablation, dump_json, evaluate, pair_baseline
from .layers import ConvKind, ModelDims, ModelParams
from .mln import build_mln, group_by_label, read_mlns, write_mlns
from .preprocess import (
    ContractionTable,
    EmojiAliasTable,
    CleanTweet,
    clean,
    filter_by_sentiment,
    read_corpus,
    read_predictions,
    read_tsv_table,
    write_clean,
    write_corpus,
)
from .synthetic import GenConfig, embedding_table, generate
from .training import TrainConfig, model_grad_check, split, train, write_history

log = logging.getLogger("mlta")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """Raise instead of exiting so ``main`` controls the exit code."""

    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


_FORMATTER = argparse.ArgumentDefaultsHelpFormatter


# -- shared flag groups ---------------------------------------------------


def _add_tables(p: argparse.ArgumentParser) -> None:
    p.add_argument("--contractions", type=Path, help="TSV contraction table; unset means the packaged table")
    p.add_argument("--emoji", type=Path, help="TSV emoji alias table; unset means the packaged table")
    p.add_argument("--vocab-embeddings", type=Path, help="embedding file whose tokens drive hashtag segmentation")


def _add_embeddings(p: argparse.ArgumentParser, required: bool = True) -> None:
    p.add_argument("--embeddings", type=Path, required=required, help="primary embedding text file")
    p.add_argument("--fallback-embeddings", type=Path, help="secondary table consulted for tokens missing from the primary")


def _add_model(p: argparse.ArgumentParser) -> None:
    p.add_argument("--conv", default="graphconv", help="convolution: gcn, gatv2 or graphconv")
    p.add_argument("--heads", type=int, default=5, help="attention heads (gatv2 only)")
    p.add_argument("--hidden", type=int, default=128, help="convolution output width")
    p.add_argument("--fc1", type=int, default=128, help="first dense layer width")
    p.add_argument("--fc2", type=int, default=64, help="second dense layer width")
    p.add_argument("--dropout", type=float, default=0.5, help="dropout rate after the last convolution")
    p.add_argument("--pooling", choices=("mean", "maxabs"), default="mean", help="per-layer graph readout")
    p.add_argument("--readout", choices=("concat", "sum"), default="concat", help="how the three layer vectors combine")


def _add_training(p: argparse.ArgumentParser) -> None:
    p.add_argument("--epochs", type=int, default=100, help="training epochs")
    p.add_argument("--lr", type=float, default=0.001, help="Adam learning rate")
    p.add_argument("--batch-size", type=int, default=32, help="MLNs per mini-batch")
    p.add_argument("--seed", type=int, default=0, help="seed for initialisation, split, shuffling and dropout")
    p.add_argument("--split-fraction", type=float, default=0.8, help="stratified training share")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="mlta", description="Group-level emotion classification on multi-layered tweet networks.")
    parser.add_argument("--config", type=Path, help="key=value file; any flag may be set, explicit flags win")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", metavar="command", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("preprocess", help="clean a raw corpus", formatter_class=_FORMATTER)
    p.add_argument("--corpus", type=Path, required=True, help="JSONL records with text and label")
    p.add_argument("--out", type=Path, required=True, help="cleaned JSONL output")
    p.add_argument("--predictions", type=Path, help="external polarity per tweet; keep only agreeing tweets")
    _add_tables(p)

    p = sub.add_parser("build-graphs", help="group tweets and build MLNs", formatter_class=_FORMATTER)
    p.add_argument("--corpus", type=Path, required=True, help="raw or cleaned JSONL corpus")
    p.add_argument("--group-size", type=int, default=300, help="tweets per MLN")
    p.add_argument("--out", type=Path, required=True, help="MLN JSONL output")
    _add_tables(p)

    p = sub.add_parser("train", help="train a classifier", formatter_class=_FORMATTER)
    p.add_argument("--graphs", type=Path, required=True, help="MLN JSONL file")
    _add_embeddings(p)
    _add_model(p)
    _add_training(p)
    p.add_argument("--out", type=Path, required=True, help="checkpoint JSON output")
    p.add_argument("--history", type=Path, help="history CSV; unset means <out stem>.history.csv")
    p.add_argument("--timing", action="store_true", help="record seconds per epoch in the history (not reproducible)")

    p = sub.add_parser("evaluate", help="score a checkpoint", formatter_class=_FORMATTER)
    p.add_argument("--graphs", type=Path, required=True, help="MLN JSONL file")
    _add_embeddings(p)
    p.add_argument("--checkpoint", type=Path, required=True, help="checkpoint JSON")
    p.add_argument("--subset", choices=("all", "train", "test"), default="all", help="which side of the split to score")
    p.add_argument("--seed", type=int, default=0, help="split seed (with --subset)")
    p.add_argument("--split-fraction", type=float, default=0.8, help="split share (with --subset)")
    p.add_argument("--json", type=Path, help="also write the report as JSON")

    p = sub.add_parser("ablate", help="train every convolution kind on the same split", formatter_class=_FORMATTER)
    p.add_argument("--graphs", type=Path, required=True, help="MLN JSONL file")
    _add_embeddings(p)
    _add_model(p)
    _add_training(p)
    p.add_argument("--json", type=Path, help="also write the report as JSON")

    p = sub.add_parser("pair-baseline", help="polarity comparison on two-tweet MLNs", formatter_class=_FORMATTER)
    p.add_argument("--graphs", type=Path, required=True, help="MLN JSONL file built with group size 2")
    _add_embeddings(p)
    p.add_argument("--checkpoint", type=Path, required=True, help="checkpoint JSON")
    p.add_argument(
        "--external", action="append", default=[], metavar="NAME=PATH",
        help="external polarity predictions, one line per pair; repeatable",
    )
    p.add_argument("--json", type=Path, help="also write the report as JSON")

    p = sub.add_parser("gen-synth", help="write a synthetic corpus and embedding file", formatter_class=_FORMATTER)
    d = GenConfig()
    p.add_argument("--out-corpus", type=Path, required=True, help="corpus JSONL output")
    p.add_argument("--out-embeddings", type=Path, required=True, help="embedding text output")
    p.add_argument("--tweets-per-class", type=int, default=d.tweets_per_class, help="tweets for each emotion")
    p.add_argument("--vocab-per-class", type=int, default=d.vocab_per_class, help="class-specific words")
    p.add_argument("--shared-vocab", type=int, default=d.shared_vocab, help="words shared by all classes")
    p.add_argument("--hashtag-rate", type=float, default=d.hashtag_rate, help="probability a tweet carries hashtags")
    p.add_argument("--noise-rate", type=float, default=d.noise_rate, help="probability a class token is drawn from a random class")
    p.add_argument("--dim", type=int, default=d.embedding_dim, help="embedding dimension")
    p.add_argument("--seed", type=int, default=d.seed, help="generator seed")

    p = sub.add_parser("grad-check", help="finite-difference check of model gradients", formatter_class=_FORMATTER)
    p.add_argument("--conv", action="append", help="kinds to check (default: all); repeatable")
    p.add_argument("--seed", type=int, default=0, help="toy batch and initialisation seed")
    p.add_argument("--epsilon", type=float, default=1e-5, help="central-difference step")
    p.add_argument("--tolerance", type=float, default=1e-4, help="maximum relative error")
    p.add_argument("--heads", type=int, default=5, help="attention heads for gatv2")
    return parser


# -- config file ------------------------------------------------------------


def read_config(path: Path) -> dict[str, str]:
    """Parse ``key = value`` lines; ``#`` starts a comment and keys may use dashes."""
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ParseError(f"{path}:{lineno}: expected key=value")
            key, value = (s.strip() for s in line.split("=", 1))
            out[key.replace("-", "_")] = value
    return out


def _subparser(parser: argparse.ArgumentParser, command: str) -> argparse.ArgumentParser:
    action = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))
    return action.choices[command]


def _apply_config(parser: argparse.ArgumentParser, argv: Sequence[str]) -> None:
    """Install config values as subcommand defaults so explicit flags still win."""
    pre = _Parser(add_help=False)
    pre.add_argument("--config", type=Path)
    known, rest = pre.parse_known_args(argv)
    if known.config is None:
        return
    command = next((a for a in rest if a in COMMANDS), None)
    if command is None:
        return
    values = read_config(known.config)
    sub = _subparser(parser, command)
    actions = {a.dest: a for a in sub._actions if a.dest != "help"}
    defaults = {}
    for key, raw in values.items():
        action = actions.get(key)
        if action is None:
            raise UsageError(f"config {known.config}: unknown key {key!r} for {command}")
        if isinstance(action, argparse._StoreTrueAction):
            defaults[key] = raw.lower() in ("1", "true", "yes", "on")
        elif isinstance(action, argparse._AppendAction):
            defaults[key] = [action.type(v) if action.type else v for v in raw.split(",")]
        else:
            try:
                defaults[key] = action.type(raw) if action.type else raw
            except ValueError:
                raise UsageError(f"config {known.config}: bad value for {key}: {raw!r}") from None
            if action.choices is not None and defaults[key] not in action.choices:
                raise UsageError(f"config {known.config}: {key} must be one of {sorted(action.choices)}")
        action.required = False
    sub.set_defaults(**defaults)


# -- helpers -------------------------------------------------------------------


def _tables(args) -> tuple[ContractionTable | None, EmojiAliasTable | None, set[str] | None]:
    contractions = ContractionTable(read_tsv_table(args.contractions)) if args.contractions else None
    emoji = EmojiAliasTable(read_tsv_table(args.emoji)) if args.emoji else None
    vocab = vocabulary(load_table(args.vocab_embeddings)) if args.vocab_embeddings else None
    return contractions, emoji, vocab


def _load_embeddings(args) -> tuple[EmbeddingTable, EmbeddingTable | None]:
    primary = load_table(args.embeddings)
    fallback = load_table(args.fallback_embeddings) if args.fallback_embeddings else None
    if fallback is not None and fallback.dimension != primary.dimension:
        raise DataError(f"fallback dimension {fallback.dimension} differs from primary {primary.dimension}")
    return primary, fallback


def _encoded(args):
    primary, fallback = _load_embeddings(args)
    mlns = read_mlns(args.graphs)
    if not mlns:
        raise DataError(f"{args.graphs}: no MLNs")
    return encode(mlns, primary, fallback), primary.dimension


def _train_config(args, f_in: int) -> TrainConfig:
    try:
        return TrainConfig(
            learning_rate=args.lr,
            epochs=args.epochs,
            batch_size=args.batch_size,
            dropout=args.dropout,
            seed=args.seed,
            conv_kind=ConvKind.parse(args.conv),
            heads=args.heads,
            split_fraction=args.split_fraction,
            dims=ModelDims(f_in=f_in, hidden=args.hidden, fc1=args.fc1, fc2=args.fc2),
            pooling=args.pooling,
            readout=args.readout,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _read_tweets(path: Path, tables) -> list[CleanTweet]:
    """Accept either cleaned records (as written by ``preprocess``) or raw ones."""
    with open(path, encoding="utf-8") as fh:
        first = next((line for line in fh if line.strip()), None)
    if first is None:
        raise DataError(f"{path}: empty corpus")
    try:
        is_clean = "keyword_tokens" in json.loads(first)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: {exc}") from None
    if is_clean:
        from .preprocess import read_clean

        return read_clean(path)
    return _clean_all(read_corpus(path), tables)


def _clean_all(raw, tables) -> list[CleanTweet]:
    contractions, emoji, vocab = tables
    out, skipped = [], 0
    for tweet in raw:
        try:
            out.append(clean(tweet, contractions, emoji, vocab))
        except DataError as exc:
            skipped += 1
            log.debug("skipping tweet: %s", exc)
    if skipped:
        log.warning("skipped %d tweet(s) with no tokens after cleaning", skipped)
    return out


# -- commands -------------------------------------------------------------------


def cmd_preprocess(args) -> int:
    raw = read_corpus(args.corpus)
    if args.predictions:
        before = len(raw)
        raw = filter_by_sentiment(raw, read_predictions(args.predictions))
        log.info("sentiment filter kept %d of %d tweets", len(raw), before)
    tweets = _clean_all(raw, _tables(args))
    write_clean(tweets, args.out)
    log.info("wrote %d cleaned tweets to %s", len(tweets), args.out)
    return EXIT_OK


def cmd_build_graphs(args) -> int:
    if args.group_size < 1:
        raise UsageError("--group-size must be >= 1")
    tweets = _read_tweets(args.corpus, _tables(args))
    groups, dropped = group_by_label(tweets, args.group_size)
    if dropped:
        log.warning("dropped %d leftover tweet(s) that did not fill a group of %d", dropped, args.group_size)
    write_mlns((build_mln(g) for g in groups), args.out)
    log.info("wrote %d MLNs to %s", len(groups), args.out)
    return EXIT_OK


def cmd_train(args) -> int:
    samples, dim = _encoded(args)
    config = _train_config(args, dim)
    train_set, test_set = split(samples, config.split_fraction, config.seed)
    params, history = train(train_set, test_set, config)
    params.save(args.out)
    history_path = args.history or args.out.with_name(args.out.stem + ".history.csv")
    write_history(history, history_path, timing=args.timing)
    if history:
        log.info("best epoch %s, test macro F1 %.4f", params.meta.get("best_epoch"), params.meta.get("best_test_f1", 0.0))
    return EXIT_OK


def cmd_evaluate(args) -> int:
    samples, dim = _encoded(args)
    params = ModelParams.load(args.checkpoint)
    if params.dims.f_in != dim:
        raise DataError(f"checkpoint expects {params.dims.f_in}-d features, embeddings are {dim}-d")
    if args.subset != "all":
        train_set, test_set = split(samples, args.split_fraction, args.seed)
        samples = train_set if args.subset == "train" else test_set
    report = evaluate(samples, params)
    print(report.format_table())
    if args.json:
        dump_json(report.to_json(), args.json)
    return EXIT_OK


def cmd_ablate(args) -> int:
    samples, dim = _encoded(args)
    config = _train_config(args, dim)
    train_set, test_set = split(samples, config.split_fraction, config.seed)
    report = ablation(train_set, test_set, config)
    print(report.format_table())
    if args.json:
        dump_json(report.to_json(), args.json)
    return EXIT_OK


def cmd_pair_baseline(args) -> int:
    samples, dim = _encoded(args)
    params = ModelParams.load(args.checkpoint)
    if params.dims.f_in != dim:
        raise DataError(f"checkpoint expects {params.dims.f_in}-d features, embeddings are {dim}-d")
    external = {}
    for spec in args.external:
        name, sep, path = spec.partition("=")
        if not sep or not name or not path:
            raise UsageError(f"--external expects NAME=PATH, got {spec!r}")
        external[name] = read_predictions(path)
    report = pair_baseline(samples, params, external)
    print(report.format_table())
    if args.json:
        dump_json(report.to_json(), args.json)
    return EXIT_OK


def cmd_gen_synth(args) -> int:
    try:
        config = GenConfig(
            tweets_per_class=args.tweets_per_class,
            vocab_per_class=args.vocab_per_class,
            shared_vocab=args.shared_vocab,
            hashtag_rate=args.hashtag_rate,
            noise_rate=args.noise_rate,
            seed=args.seed,
            embedding_dim=args.dim,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    write_corpus(generate(config), args.out_corpus)
    write_table(embedding_table(config), args.out_embeddings)
    return EXIT_OK


def cmd_grad_check(args) -> int:
    try:
        kinds = [ConvKind.parse(k) for k in args.conv] if args.conv else list(ConvKind)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    ok = True
    for kind in kinds:
        report = model_grad_check(kind, seed=args.seed, epsilon=args.epsilon, tolerance=args.tolerance, heads=args.heads)
        status = "ok" if report.passed else "FAIL"
        print(f"{kind.display:<10} max_rel_error {report.max_rel_error:.3e}  worst {report.worst}  {status}")
        ok = ok and report.passed
    return EXIT_OK if ok else EXIT_NUMERIC


COMMANDS = {
    "preprocess": cmd_preprocess,
    "build-graphs": cmd_build_graphs,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "ablate": cmd_ablate,
    "pair-baseline": cmd_pair_baseline,
    "gen-synth": cmd_gen_synth,
    "grad-check": cmd_grad_check,
}


def main(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        _apply_config(parser, argv)
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, DataError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA

    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO, format="%(levelname)s %(name)s: %(message)s"
    )
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
