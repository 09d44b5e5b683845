from __future__ import annotations

import numpy as np
import pytest

from dialogen import bpe
from dialogen.extract import ConversationPath, ReferenceTuple, Turn, UserReferenceStore
from dialogen.ingest import CommentRecord, build_forest


@pytest.fixture(scope="session")
def tiny_vocab() -> bpe.Vocabulary:
    corpus = [
        "hello there friend how are you doing today",
        "pretty good thanks for asking about it",
        "the weather is nice and the game was fun",
    ] * 4
    return bpe.train_bpe(corpus, target_size=300)


def make_record(
    comment_id: str,
    parent_id=None,
    link_id: str = "post1",
    author: str = "alice",
    body: str = "hello there friend",
    score: int = 5,
    subreddit: str = "test",
    over_18: bool = False,
    created_utc: int = 0,
) -> CommentRecord:
    return CommentRecord(
        id=comment_id,
        parent_id=parent_id,
        link_id=link_id,
        author=author,
        body=body,
        score=score,
        subreddit=subreddit,
        over_18=over_18,
        created_utc=created_utc,
    )


def make_chain_forest(n: int, post_id: str = "post1", **overrides):
    """A single root-to-leaf chain c1 <- c2 <- ... <- cn."""
    records = []
    for i in range(n):
        records.append(
            make_record(
                f"c{i:03d}",
                parent_id=f"c{i - 1:03d}" if i else None,
                link_id=post_id,
                author=f"user{i % 3}",
                created_utc=i,
                **overrides,
            )
        )
    return build_forest(records, post_id)


def make_conversation(authors: list[str], texts: list[str] | None = None) -> ConversationPath:
    texts = texts or [f"turn number {i} spoken with several words" for i in range(len(authors))]
    turns = tuple(
        Turn(comment_id=f"t{i}", author=a, text=texts[i], score=1)
        for i, a in enumerate(authors)
    )
    return ConversationPath(conversation_id="conv1", post_id="post1", turns=turns)


def make_store(authors: list[str], n_refs: int = 2) -> UserReferenceStore:
    store = UserReferenceStore()
    for a in authors:
        store.by_author[a] = [
            ReferenceTuple(
                parent_text="someone said something first" if j % 2 == 0 else None,
                reply_text=f"{a} reply number {j} with words",
                reply_id=f"ref-{a}-{j}",
                reply_score=10 - j,
            )
            for j in range(n_refs)
        ]
    return store


def random_forest(rng: np.random.Generator, max_nodes: int = 30):
    """A random reply forest plus the records it was built from."""
    n = int(rng.integers(1, max_nodes + 1))
    records = []
    word_pool = ["alpha", "beta", "gamma", "delta", "epsilon"]
    for i in range(n):
        parent = None
        if i > 0 and rng.random() < 0.85:
            parent = f"c{int(rng.integers(0, i)):03d}"
        n_words = int(rng.integers(1, 6))
        body = " ".join(str(word_pool[int(rng.integers(0, len(word_pool)))]) for _ in range(n_words))
        records.append(
            make_record(
                f"c{i:03d}",
                parent_id=parent,
                author=f"user{int(rng.integers(0, 5))}",
                body=body,
                score=int(rng.integers(-2, 8)),
                over_18=bool(rng.random() < 0.15),
                created_utc=int(rng.integers(0, 1000)),
            )
        )
    return build_forest(records, "post1"), records
