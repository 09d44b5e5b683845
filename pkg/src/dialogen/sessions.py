"""Durable session state for the generation service.

Sessions live in memory behind a write-ahead journal: every mutation is
appended to a JSONL file before it is applied, and loading replays the
journal, so a restart recovers exactly the sessions it had. One lock per
session serializes mutations; reads copy under the same lock.
"""

from __future__ import annotations

import json
import os
import threading
import time
import uuid
from dataclasses import dataclass
from typing import Optional

from .extract import ConversationPath, ReferenceTuple, Turn, UserReferenceStore
from .formats import (
    canonical_json,
    conversation_from_dict,
    conversation_to_dict,
    reference_tuple_from_dict,
    reference_tuple_to_dict,
)

MAX_REFERENCES_PER_AUTHOR = 8


class SessionError(KeyError):
    pass


@dataclass
class Session:
    session_id: str
    model_id: str
    speakers: list[str]
    conversation: ConversationPath
    origins: list[str]  # "human" | "model", parallel to conversation.turns
    store: UserReferenceStore
    created_at: float

    def to_dict(self) -> dict:
        return {
            "session_id": self.session_id,
            "model_id": self.model_id,
            "speakers": self.speakers,
            "conversation": conversation_to_dict(self.conversation),
            "origins": list(self.origins),
            "references": {
                author: [reference_tuple_to_dict(t) for t in tuples]
                for author, tuples in sorted(self.store.by_author.items())
            },
            "created_at": self.created_at,
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "Session":
        store = UserReferenceStore(top_k=MAX_REFERENCES_PER_AUTHOR)
        for author, tuples in obj.get("references", {}).items():
            store.by_author[author] = [reference_tuple_from_dict(t) for t in tuples]
        return cls(
            session_id=obj["session_id"],
            model_id=obj["model_id"],
            speakers=list(obj["speakers"]),
            conversation=conversation_from_dict(obj["conversation"]),
            origins=list(obj.get("origins", [])),
            store=store,
            created_at=obj.get("created_at", 0.0),
        )


class SessionStore:
    def __init__(self, journal_path: Optional[str] = None):
        self._journal_path = journal_path
        self._sessions: dict[str, Session] = {}
        self._locks: dict[str, threading.Lock] = {}
        self._global = threading.Lock()
        if journal_path and os.path.exists(journal_path):
            self._replay()

    def _replay(self) -> None:
        with open(self._journal_path, encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    self._apply(json.loads(line))

    def _journal(self, entry: dict) -> None:
        if not self._journal_path:
            return
        with open(self._journal_path, "a", encoding="utf-8") as fh:
            fh.write(canonical_json(entry) + "\n")
            fh.flush()
            os.fsync(fh.fileno())

    def _apply(self, entry: dict) -> None:
        op = entry["op"]
        if op == "create":
            session = Session.from_dict(entry["session"])
            self._sessions[session.session_id] = session
            self._locks[session.session_id] = threading.Lock()
        elif op == "turn":
            session = self._sessions[entry["session_id"]]
            turn = Turn(
                comment_id=entry["comment_id"],
                author=entry["author"],
                text=entry["text"],
                score=0,
            )
            session.conversation = ConversationPath(
                conversation_id=session.conversation.conversation_id,
                post_id=session.conversation.post_id,
                turns=session.conversation.turns + (turn,),
            )
            session.origins.append(entry["origin"])
        elif op == "refs":
            session = self._sessions[entry["session_id"]]
            session.store.by_author[entry["author"]] = [
                reference_tuple_from_dict(t) for t in entry["tuples"]
            ]

    def lock_for(self, session_id: str) -> threading.Lock:
        with self._global:
            if session_id not in self._locks:
                raise SessionError(session_id)
            return self._locks[session_id]

    def create(
        self,
        model_id: str,
        speakers: list[str],
        conversation: Optional[ConversationPath] = None,
        references: Optional[dict[str, list[ReferenceTuple]]] = None,
    ) -> Session:
        session_id = uuid.uuid4().hex
        if conversation is None:
            conversation = ConversationPath(
                conversation_id=f"session/{session_id}", post_id="", turns=()
            )
        store = UserReferenceStore(top_k=MAX_REFERENCES_PER_AUTHOR)
        for author, tuples in (references or {}).items():
            store.by_author[author] = list(tuples)[:MAX_REFERENCES_PER_AUTHOR]
        session = Session(
            session_id=session_id,
            model_id=model_id,
            speakers=list(speakers),
            conversation=conversation,
            origins=["human"] * len(conversation.turns),
            store=store,
            created_at=time.time(),
        )
        with self._global:
            self._journal({"op": "create", "session": session.to_dict()})
            self._sessions[session_id] = session
            self._locks[session_id] = threading.Lock()
        return session

    def get(self, session_id: str) -> Session:
        session = self._sessions.get(session_id)
        if session is None:
            raise SessionError(session_id)
        return session

    def add_turn(self, session_id: str, author: str, text: str, origin: str) -> Session:
        session = self.get(session_id)
        comment_id = f"session/{session_id}/{len(session.conversation.turns)}"
        entry = {
            "op": "turn",
            "session_id": session_id,
            "comment_id": comment_id,
            "author": author,
            "text": text,
            "origin": origin,
        }
        self._journal(entry)
        self._apply(entry)
        return session

    def set_references(
        self, session_id: str, author: str, tuples: list[ReferenceTuple]
    ) -> int:
        self.get(session_id)
        entry = {
            "op": "refs",
            "session_id": session_id,
            "author": author,
            "tuples": [reference_tuple_to_dict(t) for t in tuples],
        }
        self._journal(entry)
        self._apply(entry)
        return len(tuples)
