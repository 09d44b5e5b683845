"""Wire formats: conversation/reference JSONL schemas and canonical JSON."""

from __future__ import annotations

import json
from typing import Iterable, Iterator

from .extract import ConversationPath, ReferenceTuple, Turn, UserReferenceStore


def canonical_json(obj) -> str:
    """Stable JSON: sorted keys, no insignificant whitespace."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def conversation_to_dict(conv: ConversationPath) -> dict:
    return {
        "conversation_id": conv.conversation_id,
        "post_id": conv.post_id,
        "turns": [
            {
                "comment_id": t.comment_id,
                "author": t.author,
                "text": t.text,
                "score": t.score,
            }
            for t in conv.turns
        ],
    }


def conversation_from_dict(obj: dict) -> ConversationPath:
    turns = tuple(
        Turn(
            comment_id=t["comment_id"],
            author=t["author"],
            text=t["text"],
            score=int(t.get("score", 0)),
        )
        for t in obj["turns"]
    )
    return ConversationPath(
        conversation_id=obj["conversation_id"],
        post_id=obj.get("post_id", ""),
        turns=turns,
    )


def write_conversations(path: str, conversations: Iterable[ConversationPath]) -> int:
    count = 0
    with open(path, "w", encoding="utf-8") as fh:
        for conv in conversations:
            fh.write(canonical_json(conversation_to_dict(conv)) + "\n")
            count += 1
    return count


def read_conversations(path: str) -> Iterator[ConversationPath]:
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                yield conversation_from_dict(json.loads(line))


def reference_tuple_to_dict(ref: ReferenceTuple) -> dict:
    return {
        "parent": ref.parent_text,
        "reply": ref.reply_text,
        "reply_id": ref.reply_id,
        "score": ref.reply_score,
    }


def reference_tuple_from_dict(obj: dict) -> ReferenceTuple:
    return ReferenceTuple(
        parent_text=obj.get("parent"),
        reply_text=obj["reply"],
        reply_id=obj.get("reply_id", ""),
        reply_score=int(obj.get("score", 0)),
    )


def write_references(path: str, store: UserReferenceStore) -> int:
    count = 0
    with open(path, "w", encoding="utf-8") as fh:
        for author in sorted(store.by_author):
            obj = {
                "author": author,
                "tuples": [reference_tuple_to_dict(t) for t in store.by_author[author]],
            }
            fh.write(canonical_json(obj) + "\n")
            count += 1
    return count


def read_references(path: str, top_k: int = 8) -> UserReferenceStore:
    store = UserReferenceStore(top_k=top_k)
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            obj = json.loads(line)
            store.by_author[obj["author"]] = [
                reference_tuple_from_dict(t) for t in obj["tuples"]
            ]
    return store
