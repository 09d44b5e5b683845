"""Conversation path extraction and per-user reference harvesting.

Candidate paths are root-anchored chains in a reply forest. A greedy sweep
from longest candidate to shortest accepts each path that passes the six
validity rules against the multiset of already-used turns, then the top-K
scoring comments of every author are harvested as reference tuples.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Optional

from .ingest import CommentForest, CommentRecord

RULE_MIN_TURNS = "min-turns"
RULE_MAX_TURNS = "max-turns"
RULE_KARMA = "karma"
RULE_WORD_COUNT = "word-count"
RULE_SHARED_TURNS = "shared-turns"
RULE_NSFW = "nsfw"

DEFAULT_TOP_K = 8


@dataclass(frozen=True)
class ExtractionRules:
    min_turns: int = 5
    max_turns: int = 15
    min_karma: int = 4
    min_words: int = 3
    max_shared_turns: int = 2
    exclude_nsfw: bool = True

    def __post_init__(self) -> None:
        if not (1 <= self.min_turns <= self.max_turns):
            raise ValueError("need 1 <= min_turns <= max_turns")
        if self.min_karma < 0 or self.min_words < 0 or self.max_shared_turns < 0:
            raise ValueError("karma/word/shared thresholds must be >= 0")


@dataclass(frozen=True)
class Turn:
    comment_id: str
    author: str
    text: str
    score: int


@dataclass(frozen=True)
class ConversationPath:
    conversation_id: str
    post_id: str
    turns: tuple[Turn, ...]

    @property
    def authors(self) -> list[str]:
        seen: list[str] = []
        for turn in self.turns:
            if turn.author not in seen:
                seen.append(turn.author)
        return seen

    def comment_ids(self) -> set[str]:
        return {turn.comment_id for turn in self.turns}


@dataclass(frozen=True)
class ReferenceTuple:
    parent_text: Optional[str]
    reply_text: str
    reply_id: str
    reply_score: int


@dataclass
class UserReferenceStore:
    """Per-author reference tuples, capped at top_k and sorted by score."""

    top_k: int = DEFAULT_TOP_K
    by_author: dict[str, list[ReferenceTuple]] = field(default_factory=dict)

    def for_author(self, author: str) -> list[ReferenceTuple]:
        return list(self.by_author.get(author, []))

    def add(self, author: str, tuples: Iterable[ReferenceTuple]) -> None:
        merged = self.by_author.get(author, []) + list(tuples)
        merged.sort(key=lambda t: (-t.reply_score, t.reply_id))
        self.by_author[author] = merged[: self.top_k]

    def merge(self, other: "UserReferenceStore") -> "UserReferenceStore":
        out = UserReferenceStore(top_k=self.top_k)
        for author, tuples in self.by_author.items():
            out.add(author, tuples)
        for author, tuples in other.by_author.items():
            out.add(author, tuples)
        return out


def word_count(text: str) -> int:
    """Maximal nonempty substrings separated by Unicode whitespace."""
    return len(text.split())


def enumerate_candidates(
    forest: CommentForest, rules: ExtractionRules
) -> list[list[CommentRecord]]:
    """All root-to-node chains with length in [min_turns, max_turns].

    Ordered longest first, ties broken by (post_id, final comment id)
    ascending; within one forest the post id is constant so ties reduce to
    the final comment id.
    """
    candidates: list[list[CommentRecord]] = []
    for root in forest.roots:
        stack: list[tuple[str, list[str]]] = [(root, [root])]
        while stack:
            node, chain = stack.pop()
            if rules.min_turns <= len(chain) <= rules.max_turns:
                candidates.append([forest.record(cid) for cid in chain])
            if len(chain) < rules.max_turns:
                for child in forest.children(node):
                    stack.append((child, chain + [child]))
    candidates.sort(key=lambda path: (-len(path), forest.post_id, path[-1].id))
    return candidates


def is_valid_path(
    path: list[CommentRecord],
    used: Counter[str],
    rules: ExtractionRules,
) -> tuple[bool, list[str]]:
    """Check the six validity rules; the second element names every failure."""
    violations: list[str] = []
    if len(path) < rules.min_turns:
        violations.append(RULE_MIN_TURNS)
    if len(path) > rules.max_turns:
        violations.append(RULE_MAX_TURNS)
    if not any(rec.score >= rules.min_karma for rec in path):
        violations.append(RULE_KARMA)
    if not all(word_count(rec.body) >= rules.min_words for rec in path):
        violations.append(RULE_WORD_COUNT)
    if sum(1 for rec in path if used.get(rec.id, 0) > 0) > rules.max_shared_turns:
        violations.append(RULE_SHARED_TURNS)
    if rules.exclude_nsfw and any(rec.over_18 for rec in path):
        violations.append(RULE_NSFW)
    return (not violations, violations)


def _to_conversation(path: list[CommentRecord], post_id: str) -> ConversationPath:
    turns = tuple(
        Turn(comment_id=rec.id, author=rec.author, text=rec.body, score=rec.score)
        for rec in path
    )
    return ConversationPath(
        conversation_id=f"{post_id}/{path[-1].id}",
        post_id=post_id,
        turns=turns,
    )


def extract_conversations(
    forest: CommentForest, rules: ExtractionRules
) -> list[ConversationPath]:
    """Greedy longest-first sweep over candidates against a used-turn multiset."""
    used: Counter[str] = Counter()
    out: list[ConversationPath] = []
    for path in enumerate_candidates(forest, rules):
        ok, _ = is_valid_path(path, used, rules)
        if ok:
            for rec in path:
                used[rec.id] += 1
            out.append(_to_conversation(path, forest.post_id))
    return out


def harvest_references(
    records: Iterable[CommentRecord],
    parent_lookup: Optional[dict[str, CommentRecord]] = None,
    top_k: int = DEFAULT_TOP_K,
) -> UserReferenceStore:
    """Keep each author's top_k highest-scoring comments as reference tuples.

    Parent text is resolved when the parent record exists in the lookup (or
    among the records themselves) and left absent otherwise, which also
    covers top-level replies. Score ties break by reply id ascending.
    """
    records = list(records)
    lookup = dict(parent_lookup) if parent_lookup else {}
    for rec in records:
        lookup.setdefault(rec.id, rec)

    store = UserReferenceStore(top_k=top_k)
    by_author: dict[str, list[CommentRecord]] = {}
    for rec in records:
        by_author.setdefault(rec.author, []).append(rec)
    for author, recs in by_author.items():
        recs.sort(key=lambda r: (-r.score, r.id))
        tuples = []
        for rec in recs[:top_k]:
            parent = lookup.get(rec.parent_id) if rec.parent_id else None
            tuples.append(
                ReferenceTuple(
                    parent_text=parent.body if parent else None,
                    reply_text=rec.body,
                    reply_id=rec.id,
                    reply_score=rec.score,
                )
            )
        store.by_author[author] = tuples
    return store
