"""Corpus reports and figures.

Every report writes a small delimited file next to one or more rendered
figures, so a run leaves both machine-readable numbers and something a
human can glance at.
"""

from __future__ import annotations

import csv
import os
from typing import Iterable, Optional

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .evaluation import EvalReport
from .extract import ConversationPath, UserReferenceStore


def corpus_stats(
    conversations: Iterable[ConversationPath], store: UserReferenceStore
) -> dict:
    """Dataset-card columns: conversations, turns, users, reference tuples."""
    conversations = list(conversations)
    users = set()
    turns = 0
    for conv in conversations:
        turns += len(conv.turns)
        users.update(t.author for t in conv.turns)
    refs = sum(len(v) for v in store.by_author.values())
    return {
        "conversations": len(conversations),
        "turns": turns,
        "users": len(users),
        "reference_tuples": refs,
    }


def write_stats_csv(stats: dict, path: str) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["conversations", "turns", "users", "reference_tuples"])
        writer.writerow(
            [
                stats["conversations"],
                stats["turns"],
                stats["users"],
                stats["reference_tuples"],
            ]
        )


def render_stats_figures(
    conversations: Iterable[ConversationPath],
    store: UserReferenceStore,
    out_dir: str,
) -> list[str]:
    """Histogram the turn counts and per-user reference counts to PNG files."""
    conversations = list(conversations)
    os.makedirs(out_dir, exist_ok=True)
    paths = []

    lengths = [len(c.turns) for c in conversations]
    fig, ax = plt.subplots(figsize=(6, 4))
    if lengths:
        bins = range(min(lengths), max(lengths) + 2)
        ax.hist(lengths, bins=bins, color="#4878d0", edgecolor="white", align="left")
    ax.set_xlabel("turns per conversation")
    ax.set_ylabel("conversations")
    ax.set_title("Conversation lengths")
    path = os.path.join(out_dir, "conversation_lengths.png")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    paths.append(path)

    ref_counts = [len(v) for v in store.by_author.values()]
    fig, ax = plt.subplots(figsize=(6, 4))
    if ref_counts:
        bins = range(0, max(ref_counts) + 2)
        ax.hist(ref_counts, bins=bins, color="#ee854a", edgecolor="white", align="left")
    ax.set_xlabel("reference tuples per user")
    ax.set_ylabel("users")
    ax.set_title("Reference history sizes")
    path = os.path.join(out_dir, "reference_counts.png")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    paths.append(path)
    return paths


def render_training_curves(metrics: list[dict], path: str) -> str:
    fig, (ax_loss, ax_lr) = plt.subplots(2, 1, figsize=(6, 6), sharex=True)
    iters = [m["iter"] for m in metrics]
    ax_loss.plot(iters, [m["loss"] for m in metrics], color="#4878d0", lw=1.0)
    ax_loss.set_ylabel("masked-token loss")
    ax_loss.set_title("Training")
    ax_lr.plot(iters, [m["lr"] for m in metrics], color="#ee854a", lw=1.0)
    ax_lr.set_ylabel("learning rate")
    ax_lr.set_xlabel("iteration")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def render_speaker_breakdown(report: EvalReport, path: str) -> Optional[str]:
    if not report.per_speaker:
        return None
    fig, ax = plt.subplots(figsize=(max(4, 0.6 * len(report.per_speaker)), 4))
    names = [s.speaker for s in report.per_speaker]
    ppls = [s.token_ppl for s in report.per_speaker]
    ax.bar(names, ppls, color="#6acc64", edgecolor="white")
    ax.set_ylabel("token perplexity")
    ax.set_title("Per-speaker perplexity")
    ax.tick_params(axis="x", rotation=45)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
