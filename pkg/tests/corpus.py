"""Synthetic corpora for training and evaluation tests.

The overfit corpus is a fixed handful of short conversations a tiny model
must memorize. The persona corpus gives every author a signature word that
appears in their turns and reference replies but is unpredictable from the
conversation alone, so reference-conditioned models hold a measurable
likelihood advantage over reference-free ones on held-out conversations.
"""

from __future__ import annotations

import numpy as np

from dialogen import bpe
from dialogen.extract import ConversationPath, ReferenceTuple, Turn, UserReferenceStore

_WORDS = [
    "the", "a", "game", "movie", "book", "was", "is", "really", "quite",
    "good", "bad", "great", "fun", "boring", "i", "think", "you", "we",
    "should", "play", "watch", "read", "again", "tomorrow", "never",
    "totally", "agree", "disagree", "right", "wrong", "sure", "maybe",
]

_SIGNATURES = [
    "zorp", "quill", "fenk", "blat", "grum", "snev", "trox", "plim",
    "vask", "drub", "klon", "merv", "nulp", "oxat", "pryg", "quez",
    "rilt", "sabb", "tunc", "ulfo", "vrim", "wost", "xael", "ybbo",
    "zint", "acke", "bolv", "cyrn", "dask", "elph", "fwip", "gnat",
]


def _sentence(rng: np.random.Generator, n_words: int) -> str:
    return " ".join(_WORDS[int(rng.integers(0, len(_WORDS)))] for _ in range(n_words))


def overfit_corpus(n_conversations: int = 16, seed: int = 7):
    """Fixed short two-speaker conversations plus a vocabulary over them."""
    rng = np.random.default_rng(seed)
    conversations = []
    for c in range(n_conversations):
        authors = [f"u{c % 4}", f"u{(c + 1) % 4}"]
        turns = []
        for j in range(int(rng.integers(3, 6))):
            turns.append(
                Turn(
                    comment_id=f"ov{c}-{j}",
                    author=authors[j % 2],
                    text=_sentence(rng, int(rng.integers(3, 7))),
                    score=5,
                )
            )
        conversations.append(
            ConversationPath(conversation_id=f"overfit/{c}", post_id=f"p{c}", turns=tuple(turns))
        )
    texts = [t.text for c in conversations for t in c.turns]
    vocab = bpe.train_bpe(texts, target_size=380)
    return conversations, vocab


def persona_corpus(
    seed: int,
    n_authors: int = 32,
    train_per_author: int = 4,
    heldout_per_author: int = 1,
    turns_per_conv: int = 4,
    refs_per_author: int = 4,
):
    """Conversations where every turn opens with its author's signature word.

    Signatures also head each author's reference replies, so a model that
    reads references can predict them on held-out conversations while a
    reference-free model cannot.
    """
    rng = np.random.default_rng(seed)
    authors = [f"author{i:02d}" for i in range(n_authors)]
    signature = {a: _SIGNATURES[i % len(_SIGNATURES)] for i, a in enumerate(authors)}

    def make_turn(conv_id: str, j: int, author: str) -> Turn:
        text = f"{signature[author]} {_sentence(rng, int(rng.integers(2, 5)))}"
        return Turn(comment_id=f"{conv_id}/{j}", author=author, text=text, score=3)

    def make_conv(conv_id: str, a: str, b: str) -> ConversationPath:
        turns = tuple(
            make_turn(conv_id, j, a if j % 2 == 0 else b) for j in range(turns_per_conv)
        )
        return ConversationPath(conversation_id=conv_id, post_id=conv_id, turns=turns)

    train, heldout = [], []
    for i, a in enumerate(authors):
        for k in range(train_per_author):
            partner = authors[(i + k + 1) % n_authors]
            train.append(make_conv(f"train/{a}/{k}", a, partner))
        for k in range(heldout_per_author):
            partner = authors[(i + 7 * (k + 1)) % n_authors]
            if partner == a:
                partner = authors[(i + 1) % n_authors]
            heldout.append(make_conv(f"heldout/{a}/{k}", a, partner))

    store = UserReferenceStore()
    for a in authors:
        store.by_author[a] = [
            ReferenceTuple(
                parent_text=None if j % 2 else _sentence(rng, 3),
                reply_text=f"{signature[a]} {_sentence(rng, 3)}",
                reply_id=f"ref/{a}/{j}",
                reply_score=10 - j,
            )
            for j in range(refs_per_author)
        ]

    texts = [t.text for c in train for t in c.turns]
    for tuples in store.by_author.values():
        for ref in tuples:
            if ref.parent_text:
                texts.append(ref.parent_text)
            texts.append(ref.reply_text)
    vocab = bpe.train_bpe(texts, target_size=420)
    return train, heldout, store, vocab
