"""Command-line entry point.

Subcommands: encode, decode, train, eval, stats, gradcheck, dump-scores,
gen-data.  Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric
failure.  Output files are written to `<path>.partial` first and renamed
on success, so an interrupted run never leaves a clean-looking artifact.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager

import numpy as np

from . import model as mdl
from .core import DataFormatError, NumericError, RegtabError, Sentence
from .data import (
    Corpus,
    SyntheticSpec,
    gen_synthetic,
    load_corpus,
    load_inventory,
    split_corpus,
    write_corpus,
    write_inventory,
)
from .decoding import decode_all
from .evaluation import (
    MatchMode,
    corpus_stats,
    evaluate_sentences,
    render_report,
    report_kv_lines,
    stats_kv_lines,
)
from .numerics import ParamStore, grad_check
from .tagging import Tag, dump_grids, encode_tags, parse_grid_dump
from .training import TrainConfig, train

log = logging.getLogger("regtab")

_SENTENCE_HEADER = "#"  # grid dump block header: "#\t<index>\t<length>"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


@contextmanager
def _atomic_output(path: str):
    tmp = path + ".partial"
    with open(tmp, "w", encoding="utf-8", newline="") as fh:
        yield fh
    os.replace(tmp, path)


def _load_kv_file(path: str) -> dict[str, str]:
    values: dict[str, str] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise DataFormatError(f"{path}:{lineno}: expected key=value")
            key, val = (p.strip() for p in line.split("=", 1))
            values[key] = val
    return values


class _Options:
    """CLI flag > config-file key > default."""

    def __init__(self, args: argparse.Namespace):
        self.args = args
        self.config = _load_kv_file(args.config) if getattr(args, "config", None) else {}

    def get(self, name: str, cast, default):
        value = getattr(self.args, name, None)
        if value is not None:
            return value
        if name in self.config:
            raw = self.config[name]
            try:
                if cast is bool:
                    return raw.lower() in ("1", "true", "yes")
                return cast(raw)
            except ValueError:
                raise DataFormatError(f"config key {name}: cannot parse {raw!r}") from None
        return default


def _map_ordered(fn, items, threads: int):
    if threads <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def _read_corpus(opts: _Options) -> Corpus:
    args = opts.args
    inventory = load_inventory(args.inventory) if getattr(args, "inventory", None) else None
    fmt = opts.get("format", str, "json-lines")
    variant = opts.get("variant", str, "exact")
    return load_corpus(args.input, fmt=fmt, inventory=inventory, variant=variant)


def _resolve_match(opts: _Options, corpus_variant: str) -> MatchMode:
    requested = opts.get("match", str, None)
    if requested is None:
        return MatchMode.PARTIAL if corpus_variant == "partial" else MatchMode.EXACT
    mode = MatchMode(requested)
    if corpus_variant == "partial" and mode is MatchMode.EXACT:
        raise DataFormatError(
            "partial-variant corpora annotate tail tokens only; use --match partial"
        )
    return mode


# ---------------------------------------------------------------- encode


def cmd_encode(opts: _Options) -> int:
    corpus = _read_corpus(opts)
    total_conflicts = 0
    with _atomic_output(opts.args.output) as fh:
        for index, (sentence, triples) in enumerate(corpus.examples):
            grids, conflicts = encode_tags(sentence, list(triples), corpus.inventory)
            total_conflicts += len(conflicts)
            fh.write(f"{_SENTENCE_HEADER}\t{index}\t{sentence.n}\n")
            dump = dump_grids(grids, corpus.inventory)
            if dump:
                fh.write(dump + "\n")
            fh.write("\n")
    print(
        f"encoded {len(corpus.examples)} sentences "
        f"({total_conflicts} tag conflicts, {corpus.load_stats.skipped_records} records skipped)"
    )
    return 0


def _parse_dump_blocks(path: str) -> list[tuple[int, int, list[str]]]:
    """Split a multi-sentence grid dump into (index, length, cell lines)."""
    blocks: list[tuple[int, int, list[str]]] = []
    current: list[str] | None = None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            if line.startswith(_SENTENCE_HEADER + "\t"):
                parts = line.split("\t")
                if len(parts) != 3:
                    raise DataFormatError(f"{path}:{lineno}: malformed sentence header")
                try:
                    idx, n = int(parts[1]), int(parts[2])
                except ValueError:
                    raise DataFormatError(f"{path}:{lineno}: malformed sentence header") from None
                if idx < 0 or n < 1:
                    raise DataFormatError(
                        f"{path}:{lineno}: sentence header needs index >= 0 and length >= 1"
                    )
                current = []
                blocks.append((idx, n, current))
            else:
                if current is None:
                    raise DataFormatError(f"{path}:{lineno}: cell line before sentence header")
                current.append(line)
    return blocks


def cmd_decode(opts: _Options) -> int:
    inventory = load_inventory(opts.args.inventory)
    blocks = _parse_dump_blocks(opts.args.input)
    with _atomic_output(opts.args.output) as fh:
        for index, n, lines in blocks:
            grids = parse_grid_dump("\n".join(lines), inventory, n)
            sentence = Sentence(tuple("_" for _ in range(n)))  # indices only
            decoded = decode_all(grids, sentence, inventory)
            record = {
                "index": index,
                "triples": [
                    {
                        "subject": [t.subject.start, t.subject.end],
                        "relation": inventory.name_of(t.relation),
                        "object": [t.object.start, t.object.end],
                    }
                    for t in sorted(decoded.triples)
                ],
            }
            fh.write(json.dumps(record) + "\n")
    print(f"decoded {len(blocks)} sentences")
    return 0


# ---------------------------------------------------------------- train


def cmd_train(opts: _Options) -> int:
    args = opts.args
    inventory = load_inventory(args.inventory) if args.inventory else None
    fmt = opts.get("format", str, "json-lines")
    variant = opts.get("variant", str, "exact")
    train_corpus = load_corpus(args.train, fmt=fmt, inventory=inventory, variant=variant)
    if args.dev:
        dev_corpus = load_corpus(
            args.dev, fmt=fmt, inventory=train_corpus.inventory, variant=variant
        )
    else:
        frac = opts.get("dev_fraction", float, 0.1)
        train_corpus, dev_corpus = split_corpus(train_corpus, frac, opts.get("seed", int, 0))

    external = None
    embeddings_path = opts.get("embeddings", str, None)
    if embeddings_path:
        external = mdl.load_embedding_file(embeddings_path)

    model_config = mdl.ModelConfig(
        vocab_size=opts.get("vocab_size", int, 10000),
        relations=len(train_corpus.inventory),
        hidden=opts.get("hidden", int, 32),
        bottleneck=opts.get("bottleneck", int, None),
        blocks=opts.get("blocks", int, 1),
        window=opts.get("window", int, 1),
        max_len=opts.get("max_len", int, 100),
    )
    train_config = TrainConfig(
        lr=opts.get("lr", float, 1e-3),
        batch_size=opts.get("batch_size", int, 16),
        epochs=opts.get("epochs", int, 100),
        seed=opts.get("seed", int, 0),
        decay_steps=opts.get("decay_steps", int, None),
        clip_norm=opts.get("clip_norm", float, None),
        checkpoint_path=args.checkpoint,
    )
    match = opts.get("match", str, None)
    result = train(
        train_corpus,
        dev_corpus,
        model_config,
        train_config,
        external=external,
        match_mode=MatchMode(match) if match else None,
    )
    with _atomic_output(args.metrics) as fh:
        for line in result.metrics_lines:
            fh.write(line + "\n")
    print(
        f"trained {train_config.epochs} epochs; best dev F1 {result.best_f1:.4f} "
        f"at epoch {result.best_epoch}; checkpoint written to {args.checkpoint}"
    )
    return 0


# ---------------------------------------------------------------- eval


def _load_model_for_eval(opts: _Options):
    values, config, vocab, inventory, external_dim = mdl.load_model(opts.args.checkpoint)
    external = None
    embeddings_path = opts.get("embeddings", str, None)
    if external_dim is not None:
        if not embeddings_path:
            raise DataFormatError(
                "checkpoint was trained with external embeddings; pass --embeddings"
            )
        external = mdl.load_embedding_file(embeddings_path)
        if external.dim != external_dim:
            raise DataFormatError(
                f"embedding width {external.dim} does not match checkpoint ({external_dim})"
            )
        if external.vocab.tokens != vocab.tokens:
            raise DataFormatError(
                "embedding file tokens differ from the ones the checkpoint was trained with"
            )
    rng = np.random.default_rng(0)
    params = mdl.init_params(config, rng, vocab, external_dim)
    params.load_values(values)
    return params, config, vocab, inventory, external


def cmd_eval(opts: _Options) -> int:
    args = opts.args
    params, config, vocab, inventory, external = _load_model_for_eval(opts)
    fmt = opts.get("format", str, "json-lines")
    variant = opts.get("variant", str, "exact")
    corpus = load_corpus(args.input, fmt=fmt, inventory=inventory, variant=variant)
    mode = _resolve_match(opts, corpus.variant)
    threads = opts.get("threads", int, 1)

    def predict_one(example):
        sentence, _ = example
        grids = mdl.predict(sentence, params, config, vocab, external)
        return set(decode_all(grids, sentence, inventory).triples)

    pred_sets = _map_ordered(predict_one, corpus.examples, threads)
    gold_sets = [set(gold) for _, gold in corpus.examples]
    report = evaluate_sentences(pred_sets, gold_sets, mode)
    text = render_report(report)
    print(text)
    if args.output:
        with _atomic_output(args.output) as fh:
            fh.write(text + "\n\n")
            for line in report_kv_lines(report):
                fh.write(line + "\n")
    return 0


# ---------------------------------------------------------------- stats


def cmd_stats(opts: _Options) -> int:
    corpus = _read_corpus(opts)
    stats = corpus_stats(corpus)
    lines = [
        f"sentences: {stats.sentence_count}",
        f"triples: {stats.triple_count}",
        f"relations: {stats.relation_count}",
        f"avg entity length: {stats.avg_entity_len:.2f}",
        f"avg region area: {stats.avg_region_area:.2f}",
        "pattern counts (multi-label): "
        + ", ".join(f"{k}={v}" for k, v in stats.pattern_counts.items()),
        "pattern counts (exclusive): "
        + ", ".join(f"{k}={v}" for k, v in stats.pattern_counts_exclusive.items()),
        "triple-count buckets: "
        + ", ".join(f"T={k}: {v}" for k, v in stats.triple_buckets.items()),
    ]
    text = "\n".join(lines)
    print(text)
    if opts.args.output:
        with _atomic_output(opts.args.output) as fh:
            fh.write(text + "\n\n")
            for line in stats_kv_lines(stats):
                fh.write(line + "\n")
    return 0


# ---------------------------------------------------------------- gradcheck


def cmd_gradcheck(opts: _Options) -> int:
    # default seed picks an instance whose loss is smooth within the probe
    # step; near a ReLU kink central differences do not estimate the gradient
    seed = opts.get("seed", int, 1)
    tokens = opts.get("tokens", int, 4)
    relations = opts.get("relations", int, 2)
    config = mdl.ModelConfig(
        vocab_size=max(tokens, 2),
        relations=relations,
        hidden=opts.get("hidden", int, 8),
        bottleneck=opts.get("bottleneck", int, None),
        blocks=opts.get("blocks", int, 1),
        window=opts.get("window", int, 1),
    )
    rng = np.random.default_rng(seed)
    words = [f"t{i}" for i in range(tokens)]
    sentence = Sentence(tuple(rng.choice(words) for _ in range(tokens)))
    vocab = mdl.Vocabulary(tuple(words))
    params = mdl.init_params(config, rng, vocab)
    gold = []
    from .tagging import TagGrid

    for r in range(relations):
        cells = rng.integers(0, 4, size=(tokens, tokens)).astype(np.int8)
        gold.append(TagGrid(r, cells))

    def objective(p: ParamStore):
        return mdl.loss(sentence, gold, p, config, vocab)

    h = opts.get("step", float, 1e-4)
    error = grad_check(objective, params, h=h)
    print(f"max relative gradient error: {error:.3e}")
    if error >= 1e-4:
        print("gradient check FAILED (threshold 1e-4)", file=sys.stderr)
        return 3
    return 0


# ---------------------------------------------------------------- dump-scores


def cmd_dump_scores(opts: _Options) -> int:
    args = opts.args
    params, config, vocab, inventory, external = _load_model_for_eval(opts)
    fmt = opts.get("format", str, "json-lines")
    variant = opts.get("variant", str, "exact")
    corpus = load_corpus(args.input, fmt=fmt, inventory=inventory, variant=variant)
    limit = opts.get("limit", int, len(corpus.examples))
    with _atomic_output(args.output) as fh:
        writer = csv.writer(fh)
        writer.writerow(["sentence", "component", "row", "col", "tag", "score"])
        for index, (sentence, _) in enumerate(corpus.examples[:limit]):
            scores = mdl.score_sentence(
                sentence, params, config, vocab, external, enforce_max_len=False
            )
            n = sentence.n
            components = [("shared", scores.shared.data)] + [
                (inventory.name_of(r), scores.residual[r].data)
                for r in range(config.relations)
            ]
            for name, grid in components:
                for row in range(n):
                    for col in range(n):
                        for tag in Tag:
                            writer.writerow(
                                [index, name, row, col, tag.name, repr(float(grid[row, col, tag]))]
                            )
    print(f"wrote scores for {min(limit, len(corpus.examples))} sentences to {args.output}")
    return 0


# ---------------------------------------------------------------- gen-data


def cmd_gen_data(opts: _Options) -> int:
    args = opts.args
    if args.config:
        with open(args.config, encoding="utf-8") as fh:
            spec = SyntheticSpec.from_kv(fh.read())
    else:
        spec = SyntheticSpec()
    overrides = {}
    for key in ("sentences", "vocab_size", "relation_count", "seed"):
        value = getattr(args, key, None)
        if value is not None:
            overrides[key] = value
    if overrides:
        from dataclasses import replace

        spec = replace(spec, **overrides)
    corpus = gen_synthetic(spec)
    tmp = args.output + ".partial"
    write_corpus(corpus, tmp)
    os.replace(tmp, args.output)
    if args.inventory_out:
        write_inventory(corpus.inventory, args.inventory_out)
    print(f"generated {len(corpus)} sentences into {args.output}")
    return 0


# ---------------------------------------------------------------- parser


def build_parser() -> _Parser:
    parser = _Parser(prog="regtab", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, *, input_required=True):
        p.add_argument("--config", help="key=value option file")
        p.add_argument("--seed", type=int)
        p.add_argument("--threads", type=int)
        p.add_argument("--format", choices=["json-lines", "json-array"])
        p.add_argument("--variant", choices=["exact", "partial"])
        p.add_argument("-v", "--verbose", action="store_true")
        if input_required:
            p.add_argument("--input", required=True)

    p = sub.add_parser("encode", help="write gold tag-grid dumps for a corpus")
    common(p)
    p.add_argument("--inventory")
    p.add_argument("--output", required=True)
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("decode", help="decode a grid dump into triples")
    common(p)
    p.add_argument("--inventory", required=True)
    p.add_argument("--output", required=True)
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("train", help="train a model")
    common(p, input_required=False)
    p.add_argument("--train", required=True)
    p.add_argument("--dev")
    p.add_argument("--dev-fraction", dest="dev_fraction", type=float)
    p.add_argument("--inventory")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--metrics", required=True)
    p.add_argument("--embeddings")
    p.add_argument("--match", choices=["partial", "exact"])
    p.add_argument("--vocab-size", dest="vocab_size", type=int)
    p.add_argument("--hidden", "--d", dest="hidden", type=int)
    p.add_argument("--bottleneck", type=int)
    p.add_argument("--blocks", type=int)
    p.add_argument("--window", type=int)
    p.add_argument("--max-len", dest="max_len", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--decay-steps", dest="decay_steps", type=int)
    p.add_argument("--clip-norm", dest="clip_norm", type=float)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a corpus")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--embeddings")
    p.add_argument("--match", choices=["partial", "exact"])
    p.add_argument("--output")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("stats", help="corpus statistics")
    common(p)
    p.add_argument("--inventory")
    p.add_argument("--output")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("gradcheck", help="finite-difference check of the model gradient")
    common(p, input_required=False)
    p.add_argument("--tokens", type=int)
    p.add_argument("--relations", type=int)
    p.add_argument("--hidden", "--d", dest="hidden", type=int)
    p.add_argument("--bottleneck", type=int)
    p.add_argument("--blocks", type=int)
    p.add_argument("--window", type=int)
    p.add_argument("--step", type=float)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("dump-scores", help="write per-cell logits as CSV")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--embeddings")
    p.add_argument("--limit", type=int)
    p.add_argument("--output", required=True)
    p.set_defaults(func=cmd_dump_scores)

    p = sub.add_parser("gen-data", help="generate a synthetic corpus")
    common(p, input_required=False)
    p.add_argument("--sentences", type=int)
    p.add_argument("--vocab-size", dest="vocab_size", type=int)
    p.add_argument("--relations", dest="relation_count", type=int)
    p.add_argument("--output", required=True)
    p.add_argument("--inventory-out", dest="inventory_out")
    p.set_defaults(func=cmd_gen_data)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        opts = _Options(args)
        return args.func(opts)
    except FileNotFoundError as exc:
        print(f"regtab: file not found: {exc.filename or exc}", file=sys.stderr)
        return 2
    except IsADirectoryError as exc:
        print(f"regtab: expected a file: {exc.filename or exc}", file=sys.stderr)
        return 2
    except UnicodeDecodeError as exc:
        print(f"regtab: not a text file ({exc.object[:20]!r}...)", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"regtab: numeric failure: {exc}", file=sys.stderr)
        return 3
    except (DataFormatError, RegtabError) as exc:
        print(f"regtab: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
