"""Operator entry points wiring every pipeline stage.

Subcommands: ingest, extract, tokenize, encode, train, eval, sample, serve,
stats. Flags mirror the config dataclass fields one to one; a --config JSON
document supplies defaults and explicit flags win. Data goes to files,
logs to stderr; errors exit nonzero with one machine-parsable line.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import fields as dataclass_fields
from typing import Optional

from . import bpe, datasetio, formats, report
from .checkpoint import load_checkpoint
from .encoding import expand_per_speaker
from .evaluation import perplexity
from .extract import (
    ExtractionRules,
    UserReferenceStore,
    extract_conversations,
    harvest_references,
)
from .generation import SamplerConfig, generate_multi_turn
from .ingest import IngestStats, ingest_month, iter_records
from .model import ModelConfig
from .training import TrainConfig, train_loop

_CONFIG_SECTIONS = ("paths", "extraction", "model", "train", "sampler")


class CliError(RuntimeError):
    def __init__(self, code: str, message: str):
        self.code = code
        super().__init__(message)


def load_pipeline_config(path: str) -> dict:
    with open(path, encoding="utf-8") as fh:
        obj = json.load(fh)
    unknown = set(obj) - set(_CONFIG_SECTIONS)
    if unknown:
        raise CliError("config", f"unknown config sections: {sorted(unknown)}")
    for section, cls in (
        ("extraction", ExtractionRules),
        ("train", TrainConfig),
        ("model", ModelConfig),
        ("sampler", SamplerConfig),
    ):
        if section in obj:
            allowed = {f.name for f in dataclass_fields(cls)}
            bad = set(obj[section]) - allowed
            if bad:
                raise CliError("config", f"unknown keys in {section!r}: {sorted(bad)}")
    return obj


def _merge(section: dict, args: argparse.Namespace, names: dict[str, str]) -> dict:
    """Config section values, overridden by any flag the user actually set."""
    merged = dict(section)
    for flag_name, field_name in names.items():
        value = getattr(args, flag_name, None)
        if value is not None:
            merged[field_name] = value
    return merged


def _rules_from(args, config) -> ExtractionRules:
    section = config.get("extraction", {}) if config else {}
    merged = _merge(
        section,
        args,
        {
            "min_turns": "min_turns",
            "max_turns": "max_turns",
            "min_karma": "min_karma",
            "min_words": "min_words",
            "max_shared": "max_shared_turns",
        },
    )
    if getattr(args, "include_nsfw", False):
        merged["exclude_nsfw"] = False
    elif getattr(args, "exclude_nsfw", False):
        merged["exclude_nsfw"] = True
    return ExtractionRules(**merged)


def _print_stats(stats: IngestStats) -> None:
    print(
        f"records_read={stats.records_read} records_skipped={stats.records_skipped} "
        f"forests_built={stats.forests_built} orphans_promoted={stats.orphans_promoted}",
        file=sys.stderr,
    )


def cmd_ingest(args, config) -> int:
    forests, stats = ingest_month(args.dump)
    _print_stats(stats)
    payload = {
        "records_read": stats.records_read,
        "records_skipped": stats.records_skipped,
        "forests_built": stats.forests_built,
        "orphans_promoted": stats.orphans_promoted,
        "skip_reasons": stats.skip_reasons,
        "posts": [f.post_id for f in forests],
    }
    if args.stats_out:
        with open(args.stats_out, "w", encoding="utf-8") as fh:
            fh.write(formats.canonical_json(payload) + "\n")
    else:
        print(formats.canonical_json(payload))
    return 0


def cmd_extract(args, config) -> int:
    rules = _rules_from(args, config)
    forests, stats = ingest_month(args.dump)
    conversations = []
    for forest in forests:
        conversations.extend(extract_conversations(forest, rules))
    records = []
    stats2 = IngestStats()
    records = list(iter_records(args.dump, stats2))
    store = harvest_references(records, top_k=args.top_k)
    n_conv = formats.write_conversations(args.conversations_out, conversations)
    n_auth = formats.write_references(args.references_out, store)
    _print_stats(stats)
    print(f"conversations={n_conv} authors={n_auth}", file=sys.stderr)
    return 0


def cmd_tokenize(args, config) -> int:
    texts: list[str] = []
    for conv in formats.read_conversations(args.conversations):
        texts.extend(t.text for t in conv.turns)
    if args.references:
        store = formats.read_references(args.references)
        for tuples in store.by_author.values():
            for ref in tuples:
                if ref.parent_text:
                    texts.append(ref.parent_text)
                texts.append(ref.reply_text)
    vocab = bpe.train_bpe(texts, target_size=args.vocab_size)
    vocab.save(args.out)
    print(f"vocab_size={vocab.size} merges={len(vocab.merges)}", file=sys.stderr)
    return 0


def cmd_encode(args, config) -> int:
    vocab = bpe.load_vocabulary(args.tokenizer)
    store = (
        formats.read_references(args.references)
        if args.references
        else UserReferenceStore()
    )
    samples = []
    for conv in formats.read_conversations(args.conversations):
        samples.extend(
            expand_per_speaker(
                conv, store, vocab, include_references=not args.no_references
            )
        )
    count = datasetio.write_dataset(args.out, samples, vocab.content_hash())
    print(f"samples={count}", file=sys.stderr)
    return 0


def _model_config_from(args, config, vocab_size: int) -> ModelConfig:
    section = dict(config.get("model", {})) if config else {}
    merged = _merge(
        section,
        args,
        {
            "variant": "variant",
            "hidden_size": "hidden_size",
            "layers": "n_layers",
            "heads": "n_heads",
            "latent_dim": "latent_dim",
        },
    )
    merged.setdefault("vocab_size", vocab_size)
    return ModelConfig(**merged)


def cmd_train(args, config) -> int:
    vocab = bpe.load_vocabulary(args.tokenizer)
    samples, vocab_hash = datasetio.read_dataset(args.dataset)
    if vocab_hash != vocab.content_hash():
        raise CliError("tokenizer-mismatch", "dataset was encoded with a different tokenizer")
    model_cfg = _model_config_from(args, config, vocab.size)
    section = dict(config.get("train", {})) if config else {}
    merged = _merge(
        section,
        args,
        {
            "iters": "total_iters",
            "batch_size": "batch_size",
            "peak_lr": "peak_lr",
            "warmup_fraction": "warmup_fraction",
            "grad_clip": "grad_clip_norm",
            "kl_weight": "kl_weight",
            "checkpoint_every": "checkpoint_every",
            "seed": "seed",
        },
    )
    train_cfg = TrainConfig(**merged)
    metrics_path = args.metrics or (args.out + ".metrics.csv")
    result = train_loop(
        samples,
        model_cfg,
        train_cfg,
        vocab,
        tokenizer_hash=vocab.content_hash(),
        checkpoint_path=args.out,
        metrics_path=metrics_path,
        on_log=lambda row: print(
            f"iter={row['iter']} lr={row['lr']:.3e} loss={row['loss']:.4f}", file=sys.stderr
        ),
    )
    if result.metrics:
        figure = report.render_training_curves(result.metrics, args.out + ".training.png")
        print(f"checkpoint={args.out} metrics={metrics_path} figure={figure}", file=sys.stderr)
    return 0


def cmd_eval(args, config) -> int:
    vocab = bpe.load_vocabulary(args.tokenizer)
    ckpt = load_checkpoint(args.checkpoint)
    if ckpt.tokenizer_hash and ckpt.tokenizer_hash != vocab.content_hash():
        raise CliError("tokenizer-mismatch", "checkpoint was trained with a different tokenizer")
    conversations = list(formats.read_conversations(args.conversations))
    store = (
        formats.read_references(args.references)
        if args.references
        else UserReferenceStore()
    )
    result = perplexity(ckpt.params, ckpt.config, conversations, store, vocab)
    out = formats.canonical_json(result.to_dict())
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(out + "\n")
        if args.figure:
            report.render_speaker_breakdown(result, args.figure)
    print(out)
    return 0


def cmd_sample(args, config) -> int:
    vocab = bpe.load_vocabulary(args.tokenizer)
    ckpt = load_checkpoint(args.checkpoint)
    conversations = list(formats.read_conversations(args.conversations))
    if not conversations:
        raise CliError("empty-input", "no seed conversation found")
    store = (
        formats.read_references(args.references)
        if args.references
        else UserReferenceStore()
    )
    section = dict(config.get("sampler", {})) if config else {}
    merged = _merge(
        section,
        args,
        {"top_p": "top_p", "temperature": "temperature", "max_new_tokens": "max_new_tokens", "seed": "seed"},
    )
    if getattr(args, "greedy", False):
        merged["greedy"] = True
    sampler = SamplerConfig(**merged)
    schedule = [s for s in args.schedule.split(",") if s]
    extended, generated = generate_multi_turn(
        ckpt.params, ckpt.config, conversations[0], store, schedule, vocab, sampler
    )
    formats.write_conversations(args.out, [extended])
    sidecar = args.out + ".logprobs.jsonl"
    with open(sidecar, "w", encoding="utf-8") as fh:
        for turn in generated:
            fh.write(
                formats.canonical_json(
                    {
                        "author": turn.author,
                        "text": turn.text,
                        "logprob": turn.logprob,
                        "token_logprobs": turn.token_logprobs,
                        "stopped_on_eot": turn.stopped_on_eot,
                    }
                )
                + "\n"
            )
    print(f"conversation={args.out} logprobs={sidecar}", file=sys.stderr)
    return 0


def cmd_serve(args, config) -> int:
    import uvicorn

    from .service import create_app

    bind = args.bind or os.environ.get("DIALOGEN_BIND", "127.0.0.1:8000")
    host, _, port = bind.rpartition(":")
    app = create_app(args.model_dir, args.journal)
    uvicorn.run(app, host=host or "127.0.0.1", port=int(port), log_level="warning")
    return 0


def cmd_stats(args, config) -> int:
    conversations = (
        list(formats.read_conversations(args.conversations)) if args.conversations else []
    )
    store = (
        formats.read_references(args.references)
        if args.references
        else UserReferenceStore()
    )
    stats = report.corpus_stats(conversations, store)
    os.makedirs(args.out_dir, exist_ok=True)
    csv_path = os.path.join(args.out_dir, "stats.csv")
    report.write_stats_csv(stats, csv_path)
    figures = report.render_stats_figures(conversations, store, args.out_dir)
    print(formats.canonical_json(stats))
    print(f"csv={csv_path} figures={','.join(figures)}", file=sys.stderr)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dialogen")
    parser.add_argument("--config", default=None, help="pipeline config JSON")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="parse a dump and report forest stats")
    p.add_argument("--dump", required=True)
    p.add_argument("--stats-out", default=None)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("extract", help="extract conversations and references")
    p.add_argument("--dump", required=True)
    p.add_argument("--conversations-out", required=True)
    p.add_argument("--references-out", required=True)
    p.add_argument("--min-turns", type=int, default=None)
    p.add_argument("--max-turns", type=int, default=None)
    p.add_argument("--min-karma", type=int, default=None)
    p.add_argument("--min-words", type=int, default=None)
    p.add_argument("--max-shared", type=int, default=None)
    p.add_argument("--exclude-nsfw", action="store_true", default=False)
    p.add_argument("--include-nsfw", action="store_true", default=False)
    p.add_argument("--top-k", type=int, default=8)
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("tokenize", help="train the byte-level BPE vocabulary")
    p.add_argument("--conversations", required=True)
    p.add_argument("--references", default=None)
    p.add_argument("--vocab-size", type=int, default=bpe.DEFAULT_VOCAB_SIZE)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_tokenize)

    p = sub.add_parser("encode", help="encode conversations into a binary dataset")
    p.add_argument("--conversations", required=True)
    p.add_argument("--references", default=None)
    p.add_argument("--tokenizer", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--no-references", action="store_true")
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("train", help="train a model on an encoded dataset")
    p.add_argument("--dataset", required=True)
    p.add_argument("--tokenizer", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--metrics", default=None)
    p.add_argument("--variant", default=None, choices=["dec", "s2s", "vae", "nrc"])
    p.add_argument("--hidden-size", type=int, default=None)
    p.add_argument("--layers", type=int, default=None)
    p.add_argument("--heads", type=int, default=None)
    p.add_argument("--latent-dim", type=int, default=None)
    p.add_argument("--iters", type=int, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--peak-lr", type=float, default=None)
    p.add_argument("--warmup-fraction", type=float, default=None)
    p.add_argument("--grad-clip", type=float, default=None)
    p.add_argument("--kl-weight", type=float, default=None)
    p.add_argument("--checkpoint-every", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score conversations with a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--tokenizer", required=True)
    p.add_argument("--conversations", required=True)
    p.add_argument("--references", default=None)
    p.add_argument("--out", default=None)
    p.add_argument("--figure", default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sample", help="extend a conversation with sampled turns")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--tokenizer", required=True)
    p.add_argument("--conversations", required=True)
    p.add_argument("--references", default=None)
    p.add_argument("--schedule", required=True, help="comma-separated target speakers")
    p.add_argument("--out", required=True)
    p.add_argument("--top-p", type=float, default=None)
    p.add_argument("--temperature", type=float, default=None)
    p.add_argument("--max-new-tokens", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--greedy", action="store_true")
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("serve", help="run the generation service")
    p.add_argument("--model-dir", required=True)
    p.add_argument("--journal", default=None)
    p.add_argument("--bind", default=None, help="host:port (or env DIALOGEN_BIND)")
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("stats", help="dataset-card report with figures")
    p.add_argument("--conversations", default=None)
    p.add_argument("--references", default=None)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_stats)

    return parser


def main(argv: Optional[list[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        config = load_pipeline_config(args.config) if args.config else {}
        return args.func(args, config)
    except CliError as exc:
        print(
            formats.canonical_json({"error": exc.code, "message": str(exc)}),
            file=sys.stderr,
        )
        return 1
    except Exception as exc:  # pragma: no cover - defensive catch-all
        print(
            formats.canonical_json({"error": type(exc).__name__, "message": str(exc)}),
            file=sys.stderr,
        )
        return 1


if __name__ == "__main__":
    sys.exit(main())
