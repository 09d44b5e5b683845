"""Likelihood scoring: per-speaker conversation log-probs and perplexity.

A conversation's log-likelihood factorizes over turns; regrouping the
factors by author lets each speaker's turns be scored from that speaker's
own packed sample (their references, their loss mask), and every token is
scored exactly once. Token-level perplexity is the primary number; the
per-conversation normalization is reported alongside because its value
depends on conversation lengths.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .bpe import Vocabulary
from .encoding import EncodedSample, encode_for_target
from .extract import ConversationPath, UserReferenceStore
from .model import ModelConfig, forward, next_token_alignment


class EvalError(ValueError):
    pass


@dataclass
class SpeakerScore:
    speaker: str
    logprob: float
    tokens: int

    @property
    def token_ppl(self) -> float:
        return safe_exp(-self.logprob / self.tokens) if self.tokens else float("nan")


@dataclass
class ConversationScore:
    conversation_id: str
    total_logprob: float
    per_speaker: list[SpeakerScore]

    @property
    def tokens(self) -> int:
        return sum(s.tokens for s in self.per_speaker)


@dataclass
class EvalReport:
    token_ppl: float
    conversation_ppl: float
    scored_tokens: int
    conversations: int
    per_speaker: list[SpeakerScore] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "token_ppl": self.token_ppl,
            "conversation_ppl": self.conversation_ppl,
            "scored_tokens": self.scored_tokens,
            "conversations": self.conversations,
            "per_speaker": [
                {
                    "speaker": s.speaker,
                    "logprob": s.logprob,
                    "tokens": s.tokens,
                    "token_ppl": s.token_ppl,
                }
                for s in self.per_speaker
            ],
        }


def safe_exp(x: float) -> float:
    try:
        return math.exp(x)
    except OverflowError:
        return float("inf")


def log_softmax_rows(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return (shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))).astype(np.float64)


def masked_token_logprobs(
    params: dict[str, Tensor],
    sample: EncodedSample,
    cfg: ModelConfig,
) -> tuple[np.ndarray, np.ndarray]:
    """Log-probs of the sample's masked tokens under teacher forcing.

    Returns (token ids, log-probs), aligned; empty arrays when nothing in
    the sample is scoreable.
    """
    with ag.no_grad():
        result = forward(params, sample, cfg)
        rows, targets, mask = next_token_alignment(result, sample, cfg)
    idx = np.nonzero(mask)[0]
    if idx.size == 0:
        return np.zeros(0, dtype=np.int64), np.zeros(0)
    logp = log_softmax_rows(rows.data[idx])
    chosen = targets[idx]
    return chosen, logp[np.arange(idx.size), chosen]


def conversation_logprob(
    params: dict[str, Tensor],
    cfg: ModelConfig,
    conv: ConversationPath,
    store: UserReferenceStore,
    vocab: Vocabulary,
) -> ConversationScore:
    """Sum of every speaker's masked token log-probs: log p(conversation | refs)."""
    include_refs = cfg.variant != "nrc"
    speakers: list[SpeakerScore] = []
    for author in conv.authors:
        sample = encode_for_target(conv, store, author, vocab, include_references=include_refs)
        _, logps = masked_token_logprobs(params, sample, cfg)
        speakers.append(SpeakerScore(speaker=author, logprob=float(logps.sum()), tokens=int(logps.size)))
    total = sum(s.logprob for s in speakers)
    return ConversationScore(conversation_id=conv.conversation_id, total_logprob=total, per_speaker=speakers)


def perplexity(
    params: dict[str, Tensor],
    cfg: ModelConfig,
    conversations: Iterable[ConversationPath],
    store: UserReferenceStore,
    vocab: Vocabulary,
) -> EvalReport:
    """Token perplexity plus the per-conversation normalized variant."""
    conversations = list(conversations)
    if not conversations:
        raise EvalError("perplexity needs a nonempty dataset")
    total_logprob = 0.0
    total_tokens = 0
    by_speaker: dict[str, SpeakerScore] = {}
    for conv in conversations:
        score = conversation_logprob(params, cfg, conv, store, vocab)
        total_logprob += score.total_logprob
        total_tokens += score.tokens
        for s in score.per_speaker:
            agg = by_speaker.setdefault(s.speaker, SpeakerScore(s.speaker, 0.0, 0))
            agg.logprob += s.logprob
            agg.tokens += s.tokens
    if total_tokens == 0:
        raise EvalError("no scoreable tokens in the dataset")
    return EvalReport(
        token_ppl=safe_exp(-total_logprob / total_tokens),
        conversation_ppl=safe_exp(-total_logprob / len(conversations)),
        scored_tokens=total_tokens,
        conversations=len(conversations),
        per_speaker=sorted(by_speaker.values(), key=lambda s: s.speaker),
    )
