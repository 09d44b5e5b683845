"""HTTP facade for interactive persona-steered generation and scoring.

Endpoints mirror the library exactly: a sampling or scoring request with a
fixed seed returns byte-identical content to the equivalent direct call.
Model weights load once per model id; generation against one model runs on
a single FIFO lane, and per-session locks keep interleaved sessions
isolated.
"""

from __future__ import annotations

import os
import threading
from dataclasses import dataclass
from typing import Optional

from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from pydantic import BaseModel, Field

from .bpe import Vocabulary, load_vocabulary
from .checkpoint import Checkpoint, load_checkpoint
from .encoding import TokenType
from .evaluation import perplexity
from .extract import ConversationPath, ReferenceTuple, Turn, UserReferenceStore
from .generation import GenerationError, SamplerConfig, sample_turn
from .sessions import MAX_REFERENCES_PER_AUTHOR, SessionError, SessionStore


@dataclass
class LoadedModel:
    model_id: str
    checkpoint: Checkpoint
    vocab: Vocabulary
    lock: threading.Lock


class ModelRegistry:
    """Checkpoints (.ckpt) with sidecar tokenizer files (.tok), keyed by stem."""

    def __init__(self, model_dir: str):
        self.model_dir = model_dir
        self._models: dict[str, LoadedModel] = {}
        self._lock = threading.Lock()

    def ids(self) -> list[str]:
        if not os.path.isdir(self.model_dir):
            return []
        return sorted(
            name[:-5]
            for name in os.listdir(self.model_dir)
            if name.endswith(".ckpt")
        )

    def get(self, model_id: str) -> Optional[LoadedModel]:
        with self._lock:
            if model_id in self._models:
                return self._models[model_id]
        ckpt_path = os.path.join(self.model_dir, f"{model_id}.ckpt")
        tok_path = os.path.join(self.model_dir, f"{model_id}.tok")
        if not (os.path.exists(ckpt_path) and os.path.exists(tok_path)):
            return None
        checkpoint = load_checkpoint(ckpt_path)
        vocab = load_vocabulary(tok_path)
        if checkpoint.tokenizer_hash and checkpoint.tokenizer_hash != vocab.content_hash():
            raise RuntimeError(
                f"tokenizer {tok_path} does not match checkpoint {ckpt_path}"
            )
        model = LoadedModel(model_id, checkpoint, vocab, threading.Lock())
        with self._lock:
            self._models.setdefault(model_id, model)
            return self._models[model_id]


# --- request bodies ---------------------------------------------------------


class TurnBody(BaseModel):
    comment_id: Optional[str] = None
    author: str
    text: str
    score: int = 0


class ReferenceBody(BaseModel):
    parent: Optional[str] = None
    reply: str
    reply_id: str = ""
    score: int = 0

    def to_tuple(self) -> ReferenceTuple:
        return ReferenceTuple(
            parent_text=self.parent,
            reply_text=self.reply,
            reply_id=self.reply_id,
            reply_score=self.score,
        )


class CreateSessionBody(BaseModel):
    model_id: str
    speakers: list[str] = Field(min_length=1)
    conversation: Optional[list[TurnBody]] = None
    references: Optional[dict[str, list[ReferenceBody]]] = None


class AddTurnBody(BaseModel):
    author: str
    text: str


class SetReferencesBody(BaseModel):
    tuples: list[ReferenceBody]


class SampleBody(BaseModel):
    target: str
    top_p: Optional[float] = None
    temperature: Optional[float] = None
    max_new_tokens: Optional[int] = None
    seed: Optional[int] = None
    greedy: Optional[bool] = None


class ScoreBody(BaseModel):
    model_id: str
    conversation: list[TurnBody]
    references: dict[str, list[ReferenceBody]] = Field(default_factory=dict)


# --- helpers ----------------------------------------------------------------


def _error(status: int, code: str, message: str, fieldpath: Optional[str] = None) -> JSONResponse:
    body = {"code": code, "message": message}
    if fieldpath:
        body["field"] = fieldpath
    return JSONResponse(status_code=status, content=body)


def _turns_to_conversation(turns: list[TurnBody], conversation_id: str) -> ConversationPath:
    return ConversationPath(
        conversation_id=conversation_id,
        post_id="",
        turns=tuple(
            Turn(
                comment_id=t.comment_id or f"{conversation_id}/{i}",
                author=t.author,
                text=t.text,
                score=t.score,
            )
            for i, t in enumerate(turns)
        ),
    )


def _store_from_payload(references: dict[str, list[ReferenceBody]]) -> UserReferenceStore:
    store = UserReferenceStore(top_k=MAX_REFERENCES_PER_AUTHOR)
    for author, tuples in references.items():
        store.by_author[author] = [t.to_tuple() for t in tuples]
    return store


def _session_view(session) -> dict:
    view = session.to_dict()
    view["turns"] = [
        {
            "comment_id": t.comment_id,
            "author": t.author,
            "text": t.text,
            "score": t.score,
            "origin": origin,
        }
        for t, origin in zip(session.conversation.turns, session.origins)
    ]
    return view


def create_app(model_dir: str, journal_path: Optional[str] = None) -> FastAPI:
    app = FastAPI(title="dialogen service")
    registry = ModelRegistry(model_dir)
    sessions = SessionStore(journal_path)

    @app.exception_handler(RequestValidationError)
    async def validation_handler(request: Request, exc: RequestValidationError):
        first = exc.errors()[0] if exc.errors() else {}
        fieldpath = ".".join(str(p) for p in first.get("loc", []) if p != "body")
        # Malformed creation bodies are client errors on the document itself.
        status = 400 if request.url.path == "/v1/sessions" else 422
        return _error(status, "invalid_request", first.get("msg", "invalid request"), fieldpath)

    @app.get("/v1/models")
    def list_models():
        out = []
        for model_id in registry.ids():
            model = registry.get(model_id)
            if model is None:
                continue
            out.append(
                {
                    "model_id": model_id,
                    "variant": model.checkpoint.config.variant,
                    "hidden_size": model.checkpoint.config.hidden_size,
                    "n_layers": model.checkpoint.config.n_layers,
                    "vocab_size": model.checkpoint.config.vocab_size,
                }
            )
        return {"models": out}

    @app.post("/v1/sessions", status_code=201)
    def create_session(body: CreateSessionBody):
        model = registry.get(body.model_id)
        if model is None:
            return _error(404, "unknown_model", f"no model named {body.model_id!r}")
        for author, tuples in (body.references or {}).items():
            if len(tuples) > MAX_REFERENCES_PER_AUTHOR:
                return _error(
                    422,
                    "too_many_references",
                    f"at most {MAX_REFERENCES_PER_AUTHOR} reference tuples per author",
                    f"references.{author}",
                )
        conversation = None
        if body.conversation:
            for i, t in enumerate(body.conversation):
                if t.author not in body.speakers:
                    return _error(
                        422, "unknown_speaker", f"turn author {t.author!r} not in speakers",
                        f"conversation.{i}.author",
                    )
            conversation = _turns_to_conversation(body.conversation, "seed")
        references = {
            author: [t.to_tuple() for t in tuples]
            for author, tuples in (body.references or {}).items()
        }
        session = sessions.create(body.model_id, body.speakers, conversation, references)
        return {"session_id": session.session_id}

    @app.get("/v1/sessions/{session_id}")
    def get_session(session_id: str):
        try:
            with sessions.lock_for(session_id):
                return _session_view(sessions.get(session_id))
        except SessionError:
            return _error(404, "unknown_session", f"no session {session_id!r}")

    @app.post("/v1/sessions/{session_id}/turns")
    def add_turn(session_id: str, body: AddTurnBody):
        try:
            lock = sessions.lock_for(session_id)
        except SessionError:
            return _error(404, "unknown_session", f"no session {session_id!r}")
        with lock:
            session = sessions.get(session_id)
            if body.author not in session.speakers:
                return _error(422, "unknown_speaker", f"{body.author!r} not in speakers", "author")
            if not body.text.strip():
                return _error(422, "empty_text", "turn text must be nonempty", "text")
            model = registry.get(session.model_id)
            sessions.add_turn(session_id, body.author, body.text, origin="human")
            token_count = len(model.vocab.encode(body.text)) + 1  # plus end-of-turn
            view = _session_view(sessions.get(session_id))
            view["token_count"] = token_count
            return view

    @app.put("/v1/sessions/{session_id}/references/{author}")
    def set_references(session_id: str, author: str, body: SetReferencesBody):
        try:
            lock = sessions.lock_for(session_id)
        except SessionError:
            return _error(404, "unknown_session", f"no session {session_id!r}")
        with lock:
            if len(body.tuples) > MAX_REFERENCES_PER_AUTHOR:
                return _error(
                    422,
                    "too_many_references",
                    f"at most {MAX_REFERENCES_PER_AUTHOR} reference tuples per author",
                    "tuples",
                )
            count = sessions.set_references(
                session_id, author, [t.to_tuple() for t in body.tuples]
            )
            return {"author": author, "count": count}

    @app.post("/v1/sessions/{session_id}/sample")
    def sample_next(session_id: str, body: SampleBody):
        try:
            lock = sessions.lock_for(session_id)
        except SessionError:
            return _error(404, "unknown_session", f"no session {session_id!r}")
        with lock:
            session = sessions.get(session_id)
            if body.target not in session.speakers:
                return _error(422, "unknown_speaker", f"{body.target!r} not in speakers", "target")
            model = registry.get(session.model_id)
            try:
                sampler = SamplerConfig(
                    top_p=body.top_p if body.top_p is not None else 0.95,
                    temperature=body.temperature if body.temperature is not None else 1.0,
                    max_new_tokens=body.max_new_tokens if body.max_new_tokens is not None else 64,
                    seed=body.seed if body.seed is not None else 0,
                    greedy=bool(body.greedy),
                )
            except ValueError as exc:
                return _error(422, "invalid_sampler", str(exc))
            try:
                with model.lock:  # one compute lane per model
                    turn = sample_turn(
                        model.checkpoint.params,
                        model.checkpoint.config,
                        session.conversation,
                        session.store,
                        body.target,
                        model.vocab,
                        sampler,
                    )
            except GenerationError as exc:
                return _error(409, "context_overflow", str(exc))
            sessions.add_turn(session_id, body.target, turn.text, origin="model")
            layout = turn.layout
            return {
                "turn": {"author": body.target, "text": turn.text},
                "token_ids": turn.token_ids,
                "token_logprobs": turn.token_logprobs,
                "logprob": turn.logprob,
                "stopped_on_eot": turn.stopped_on_eot,
                "layout": {
                    "token_ids": layout.token_ids,
                    "type_ids": layout.type_ids,
                    "position_ids": layout.position_ids,
                    "loss_mask": layout.loss_mask,
                    "ref_len": layout.ref_len,
                    "conv_len": layout.conv_len,
                    "generated_from": len(layout.token_ids) - len(turn.token_ids)
                    - (1 if turn.stopped_on_eot else 0),
                },
                "transcript": _session_view(sessions.get(session_id))["turns"],
            }

    @app.post("/v1/score")
    def score(body: ScoreBody):
        model = registry.get(body.model_id)
        if model is None:
            return _error(404, "unknown_model", f"no model named {body.model_id!r}")
        if not body.conversation:
            return _error(422, "empty_conversation", "conversation must have turns", "conversation")
        conversation = _turns_to_conversation(body.conversation, "score")
        store = _store_from_payload(body.references)
        with model.lock:
            report = perplexity(
                model.checkpoint.params,
                model.checkpoint.config,
                [conversation],
                store,
                model.vocab,
            )
        return report.to_dict()

    return app


def token_type_names() -> dict[int, str]:
    return {int(t): t.name for t in TokenType}
