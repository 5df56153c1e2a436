"""Command-line interface covering every pipeline stage.

Exit codes: 0 success, 1 usage error, 2 data or artifact error.
"""

from __future__ import annotations

import argparse
import sys
from datetime import datetime

from . import corpus
from .decoding import DecoderConfig
from .engine import STRATEGIES, SuggestRequest, build_engine
from .errors import (
    ArtifactError,
    ConfigError,
    EvaluationError,
    ParseError,
    TrainingDivergedError,
)
from .evaluation import evaluate, format_table, paired_ttest, report_json
from .lm import CharGruLm
from .service import ServiceConfig, load_service_config, serve
from .trie import CountedTrie
from .user2vec import UserEmbeddings, histories_from_records
from .word2vec import SkipGramEmbeddings, VectorTable


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse exits with status 2 on usage errors; the CLI contract wants 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise _UsageError(message)


def _fractions(text: str) -> tuple[float, ...]:
    try:
        parts = tuple(float(p) for p in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad fractions {text!r}") from None
    if len(parts) != 4:
        raise argparse.ArgumentTypeError("need 4 comma-separated fractions")
    return parts


def _timestamp(text: str) -> datetime:
    try:
        return datetime.fromisoformat(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad ISO-8601 timestamp {text!r}") from None


def _add_engine_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--trie", help="completion trie file")
    parser.add_argument("--model", help="language model file")
    parser.add_argument("--word-table", help="word embedding table (word2vec text format)")
    parser.add_argument("--user-table", help="user vector table (word2vec text format)")
    parser.add_argument("--beam-width", type=int, default=10)
    parser.add_argument("--diversity", type=float, default=2.0,
                        help="diversity weight for the neural_diverse strategy")
    parser.add_argument("--max-len", type=int, default=100,
                        help="cap on generated suffix length")


def _engine_from_args(args, k: int):
    return build_engine(
        trie_path=args.trie,
        model_path=args.model,
        word_table_path=args.word_table,
        user_table_path=args.user_table,
        decoder_config=DecoderConfig(
            beam_width=max(args.beam_width, k),
            k=k,
            max_len=args.max_len,
            diversity=args.diversity,
        ),
    )


# -- subcommand implementations ----------------------------------------------

def _cmd_ingest(args) -> int:
    log_format = corpus.LogFormat(
        delimiter=args.delimiter,
        user_col=args.user_col,
        query_col=args.query_col,
        time_col=args.time_col,
        has_header=args.has_header,
    )
    with open(args.log, encoding="utf-8", errors="replace") as fh:
        records, report = corpus.parse_log(fh, log_format)
    corpus.write_records_tsv(args.out, records)
    print(
        f"parsed {report.parsed} records "
        f"({report.malformed} malformed of {report.total_lines} lines) -> {args.out}"
    )
    return 0


def _cmd_split(args) -> int:
    records = corpus.read_records_tsv(args.records)
    policy = corpus.SplitPolicy(
        fractions=args.fractions,
        mode=args.mode,
        seed=args.seed,
        min_count=args.min_count,
        max_len=args.max_len,
    )
    split = corpus.split_dataset(records, policy)
    out = args.out_dir.rstrip("/")
    import os

    os.makedirs(out, exist_ok=True)
    corpus.write_records_tsv(f"{out}/background.tsv", split.background_records)
    corpus.write_counts_tsv(f"{out}/background_counts.tsv", split.background_counts)
    corpus.write_samples_tsv(f"{out}/train.tsv", split.train)
    corpus.write_samples_tsv(f"{out}/validation.tsv", split.validation)
    corpus.write_samples_tsv(f"{out}/test.tsv", split.test)
    print(
        f"background: {len(split.background_records)} records, "
        f"{len(split.background_counts)} retained queries; "
        f"train/validation/test: {len(split.train)}/{len(split.validation)}/"
        f"{len(split.test)} prefix samples -> {out}/"
    )
    return 0


def _cmd_build_trie(args) -> int:
    counts = corpus.read_counts_tsv(args.counts)
    trie = CountedTrie(counts)
    trie.save(args.out)
    print(
        f"trie over {len(counts)} queries ({trie.total_occurrences} occurrences) -> {args.out}"
    )
    return 0


def _cmd_train_embeddings(args) -> int:
    records = corpus.read_records_tsv(args.background)
    sentences = [r.query.split(" ") for r in records]
    model = SkipGramEmbeddings(
        dim=args.dim,
        window=args.window,
        epochs=args.epochs,
        negative=args.negative,
        learning_rate=args.lr,
        min_count=args.min_count,
        seed=args.seed,
    )
    model.fit(sentences)
    model.vectors_.save(args.out)
    print(f"{len(model.vocabulary_)} word vectors of dim {args.dim} -> {args.out}")
    return 0


def _cmd_train_users(args) -> int:
    records = corpus.read_records_tsv(args.background)
    histories = histories_from_records(records)
    model = UserEmbeddings(
        dim=args.dim,
        epochs=args.epochs,
        learning_rate=args.lr,
        full_batch=args.full_batch,
        history_limit=args.history_limit,
        seed=args.seed,
    )
    model.fit(histories)
    model.vectors_.save(args.out)
    print(
        f"{len(model.users_)} user vectors of dim {args.dim} "
        f"(final objective {model.objective_history_[-1]:.4f}) -> {args.out}"
    )
    return 0


def _cmd_train_lm(args) -> int:
    train_records = corpus.records_from_samples(corpus.read_samples_tsv(args.train))
    validation = None
    if args.validation:
        validation = corpus.records_from_samples(corpus.read_samples_tsv(args.validation))
    word_table = VectorTable.load(args.word_table) if args.word_table else None
    user_table = VectorTable.load(args.user_table) if args.user_table else None
    model = CharGruLm(
        hidden_size=args.hidden,
        num_layers=args.layers,
        word_dim=word_table.dim if word_table else args.word_dim,
        user_dim=user_table.dim if user_table else args.user_dim,
        dropout=args.dropout,
        candidate_activation=args.activation,
        learning_rate=args.lr,
        clip_norm=args.clip,
        epochs=args.epochs,
        batch_size=args.batch_size,
        min_char_count=args.min_char_count,
        max_len=args.max_len,
        seed=args.seed,
    )
    model.fit(
        train_records,
        word_table=word_table,
        user_vectors=user_table,
        validation=validation,
        metrics_path=args.metrics,
    )
    model.save(args.out)
    last = model.loss_history_[-1]
    val = f", val {last['val_loss']:.4f}" if last["val_loss"] is not None else ""
    print(
        f"trained {args.epochs} epochs on {len(train_records)} queries "
        f"(train loss {last['train_loss']:.4f}, "
        f"{last['train_loss_per_char']:.4f}/char{val}) -> {args.out}"
    )
    return 0


def _cmd_eval(args) -> int:
    samples = corpus.read_samples_tsv(args.test)
    engine = _engine_from_args(args, args.k)
    strategies = [s.strip() for s in args.strategies.split(",") if s.strip()]
    for strategy in strategies:
        if strategy not in STRATEGIES:
            raise ConfigError(f"unknown strategy {strategy!r}")
    reports = [
        evaluate(engine, samples, strategy, k=args.k, latency_passes=args.latency_passes)
        for strategy in strategies
    ]
    print(format_table(reports))
    if len(reports) == 2:
        t_stat, p_value = paired_ttest(reports[0], reports[1])
        print(
            f"\npaired t-test ({reports[0].strategy} vs {reports[1].strategy}): "
            f"t={t_stat:.3f} p={p_value:.4f}"
        )
    if args.json:
        with open(args.json, "w", encoding="utf-8") as fh:
            fh.write(report_json(reports) + "\n")
        print(f"\nJSON report -> {args.json}")
    return 0


def _cmd_suggest(args) -> int:
    engine = _engine_from_args(args, args.k)
    response = engine.suggest(
        SuggestRequest(
            prefix=args.prefix,
            user_id=args.user,
            timestamp=args.t,
            k=args.k,
            strategy=args.strategy,
        )
    )
    for rank, suggestion in enumerate(response.suggestions, start=1):
        print(f"{rank}\t{suggestion.text}\t{suggestion.score:.6g}")
    print(
        f"# strategy={response.strategy} latency_ms={response.latency_ms:.2f}",
        file=sys.stderr,
    )
    return 0


def _cmd_serve(args) -> int:
    config = load_service_config(args.config) if args.config else ServiceConfig()
    for key in ("host", "trie", "model", "word_table", "user_table", "strategy", "ui_dir"):
        value = getattr(args, key)
        if value is not None:
            setattr(config, key, value)
    for key in ("port", "k", "beam_width", "max_len", "diversity"):
        value = getattr(args, key)
        if value is not None:
            setattr(config, key, value)
    serve(config)
    return 0


def _cmd_bench(args) -> int:
    import time

    samples = corpus.read_samples_tsv(args.test)
    if not samples:
        raise EvaluationError("empty test set")
    engine = _engine_from_args(args, args.k)
    per_prefix = []
    for sample in samples:
        request = SuggestRequest(
            prefix=sample.prefix,
            user_id=sample.user_id or None,
            timestamp=sample.timestamp,
            k=args.k,
            strategy=args.strategy,
        )
        passes = []
        for _ in range(args.passes):
            started = time.perf_counter()
            engine.suggest(request)
            passes.append(time.perf_counter() - started)
        per_prefix.append(sum(passes) / len(passes))
    import numpy as np

    arr = np.asarray(per_prefix) * 1000.0
    print(
        f"{args.strategy}: {len(samples)} prefixes x {args.passes} passes: "
        f"mean {arr.mean():.3f} ms, p95 {np.percentile(arr, 95):.3f} ms, "
        f"max {arr.max():.3f} ms"
    )
    return 0


# -- parser ---------------------------------------------------------------

def build_parser() -> _Parser:
    parser = _Parser(prog="typeahead", description=__doc__)
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("ingest", help="parse a raw query log into normalized records")
    p.add_argument("--log", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--delimiter", default="\t")
    p.add_argument("--has-header", action="store_true")
    p.add_argument("--user-col", type=int, default=0)
    p.add_argument("--query-col", type=int, default=1)
    p.add_argument("--time-col", type=int, default=2)
    p.set_defaults(func=_cmd_ingest)

    p = sub.add_parser("split", help="cut records into background/train/validation/test")
    p.add_argument("--records", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--fractions", type=_fractions, default=(0.7, 0.1, 0.1, 0.1))
    p.add_argument("--mode", choices=("random", "time"), default="random")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--min-count", type=int, default=3)
    p.add_argument("--max-len", type=int, default=100)
    p.set_defaults(func=_cmd_split)

    p = sub.add_parser("build-trie", help="build the completion trie from background counts")
    p.add_argument("--counts", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_build_trie)

    p = sub.add_parser("train-embeddings", help="train skip-gram word embeddings")
    p.add_argument("--background", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--dim", type=int, default=50)
    p.add_argument("--window", type=int, default=5)
    p.add_argument("--epochs", type=int, default=5)
    p.add_argument("--negative", type=int, default=5)
    p.add_argument("--lr", type=float, default=0.025)
    p.add_argument("--min-count", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_train_embeddings)

    p = sub.add_parser("train-users", help="train PV-DBOW user vectors")
    p.add_argument("--background", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--dim", type=int, default=30)
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--lr", type=float, default=0.5)
    p.add_argument("--full-batch", action="store_true")
    p.add_argument("--history-limit", type=int, default=None,
                   help="use only the most recent N history words per user")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_train_users)

    p = sub.add_parser("train-lm", help="train the character-level GRU language model")
    p.add_argument("--train", required=True, help="train prefix samples (TSV)")
    p.add_argument("--out", required=True)
    p.add_argument("--validation")
    p.add_argument("--word-table")
    p.add_argument("--user-table")
    p.add_argument("--hidden", type=int, default=64)
    p.add_argument("--layers", type=int, default=2)
    p.add_argument("--word-dim", type=int, default=50)
    p.add_argument("--user-dim", type=int, default=30)
    p.add_argument("--dropout", type=float, default=0.5)
    p.add_argument("--activation", choices=("relu", "tanh"), default="relu")
    p.add_argument("--lr", type=float, default=3e-3)
    p.add_argument("--clip", type=float, default=0.5)
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--min-char-count", type=int, default=5)
    p.add_argument("--max-len", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--metrics", help="per-epoch JSON-lines metrics file")
    p.set_defaults(func=_cmd_train_lm)

    p = sub.add_parser("eval", help="MRR + latency evaluation over test prefixes")
    p.add_argument("--test", required=True, help="test prefix samples (TSV)")
    _add_engine_flags(p)
    p.add_argument("--strategies", default="mpc,neural,neural_diverse,routed")
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--latency-passes", type=int, default=10)
    p.add_argument("--json", help="also write the report as JSON to this path")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("suggest", help="print ranked completions for one prefix")
    p.add_argument("--prefix", required=True)
    _add_engine_flags(p)
    p.add_argument("--strategy", choices=STRATEGIES, default="routed")
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--user")
    p.add_argument("--t", type=_timestamp, help="ISO-8601 request timestamp")
    p.set_defaults(func=_cmd_suggest)

    p = sub.add_parser("serve", help="run the HTTP suggest service")
    p.add_argument("--config", help="key=value config file")
    p.add_argument("--host")
    p.add_argument("--port", type=int)
    p.add_argument("--trie")
    p.add_argument("--model")
    p.add_argument("--word-table")
    p.add_argument("--user-table")
    p.add_argument("--strategy", choices=STRATEGIES)
    p.add_argument("--k", type=int)
    p.add_argument("--beam-width", type=int)
    p.add_argument("--max-len", type=int)
    p.add_argument("--diversity", type=float)
    p.add_argument("--ui-dir", help="serve this directory at /ui")
    p.set_defaults(func=_cmd_serve)

    p = sub.add_parser("bench", help="latency benchmark over test prefixes")
    p.add_argument("--test", required=True)
    _add_engine_flags(p)
    p.add_argument("--strategy", choices=STRATEGIES, default="routed")
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--passes", type=int, default=10)
    p.set_defaults(func=_cmd_bench)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError:
        return 1
    if not getattr(args, "func", None):
        parser.print_help(sys.stderr)
        return 1
    try:
        return args.func(args)
    except (
        ParseError,
        ArtifactError,
        ConfigError,
        EvaluationError,
        TrainingDivergedError,
        OSError,
        ValueError,
    ) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
