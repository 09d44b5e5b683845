"""Nucleus-sampled turn generation, single and multi-turn.

Sampling restricts each step to the smallest set of highest-probability
tokens whose cumulative mass reaches top_p, after temperature scaling and
with all special tokens except end-of-turn excluded. A seeded generator
makes every run reproducible; greedy mode exists for deterministic tests.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .autograd import Tensor
from .bpe import Vocabulary
from .encoding import (
    CONV_MAX_TOKENS,
    EncodedSample,
    TokenType,
    assemble_sample,
    encode_generation_context,
    encode_reference_history,
    select_references,
)
from .extract import ConversationPath, Turn, UserReferenceStore
from .model import ModelConfig, next_token_logits


class GenerationError(ValueError):
    pass


@dataclass(frozen=True)
class SamplerConfig:
    top_p: float = 0.95
    temperature: float = 1.0
    max_new_tokens: int = 64
    seed: int = 0
    greedy: bool = False

    def __post_init__(self) -> None:
        if not (0 < self.top_p <= 1):
            raise ValueError("top_p must be in (0, 1]")
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")


@dataclass
class GeneratedTurn:
    author: str
    text: str
    token_ids: list[int]
    logprob: float
    token_logprobs: list[float]
    stopped_on_eot: bool
    layout: EncodedSample  # full packed context including the generated tokens


def nucleus_filter(probs: np.ndarray, top_p: float) -> np.ndarray:
    """Ids of the smallest descending-probability prefix with mass >= top_p.

    Ties between equal probabilities break toward the smaller token id. The
    threshold is capped at the distribution's actual mass so a sum a hair
    under 1.0 still yields full support at top_p=1.
    """
    probs = np.asarray(probs, dtype=np.float64)
    if abs(probs.sum() - 1.0) > 1e-6:
        raise GenerationError("nucleus_filter expects a normalized distribution")
    order = np.argsort(-probs, kind="stable")
    cumulative = np.cumsum(probs[order])
    threshold = min(top_p, float(cumulative[-1]))
    cutoff = int(np.searchsorted(cumulative, threshold, side="left"))
    return order[: cutoff + 1]


def _step_distribution(
    logits: np.ndarray, vocab: Vocabulary, temperature: float
) -> np.ndarray:
    """Temperature-scaled softmax with every special except end-of-turn removed."""
    x = logits.astype(np.float64) / temperature
    for special in (vocab.sot_id, vocab.sep_id, vocab.pad_id):
        x[special] = -np.inf
    x -= x.max()
    e = np.exp(x)
    return e / e.sum()


def _grow(sample: EncodedSample, token_id: int) -> EncodedSample:
    return EncodedSample(
        token_ids=sample.token_ids + [token_id],
        type_ids=sample.type_ids + [int(TokenType.CONV_TARGET)],
        position_ids=sample.position_ids + [len(sample.token_ids)],
        loss_mask=sample.loss_mask + [1],
        ref_len=sample.ref_len,
        conv_len=sample.conv_len + 1,
        target_speaker=sample.target_speaker,
    )


def build_generation_sample(
    conv: ConversationPath,
    store: UserReferenceStore,
    target: str,
    vocab: Vocabulary,
    cfg: ModelConfig,
) -> EncodedSample:
    include_refs = cfg.variant != "nrc"
    refs = select_references(conv, store, target) if include_refs else []
    ref_segment = encode_reference_history(refs, vocab)
    conv_ids, conv_types, conv_mask = encode_generation_context(conv, target, vocab)
    sample = assemble_sample((ref_segment[0], ref_segment[1]), (conv_ids, conv_types, conv_mask), target)
    return sample


def sample_turn(
    params: dict[str, Tensor],
    cfg: ModelConfig,
    conv: ConversationPath,
    store: UserReferenceStore,
    target: str,
    vocab: Vocabulary,
    sampler: SamplerConfig,
) -> GeneratedTurn:
    """Autoregressively sample one new turn for the target speaker.

    Stops at end-of-turn, at max_new_tokens, or at the context window; a
    context already at the window is an error (truncate the conversation
    upstream and retry).
    """
    sample = build_generation_sample(conv, store, target, vocab, cfg)
    window = min(cfg.max_positions, sample.ref_len + CONV_MAX_TOKENS)
    if len(sample) >= window:
        raise GenerationError(
            f"context is already {len(sample)} tokens; truncate the conversation first"
        )
    rng = np.random.default_rng(sampler.seed)
    noise = None
    if cfg.variant == "vae":
        # one latent draw conditions the whole turn
        noise = rng.standard_normal(cfg.latent_dim) if not sampler.greedy else None

    new_ids: list[int] = []
    logprobs: list[float] = []
    stopped = False
    while len(new_ids) < sampler.max_new_tokens and len(sample) < window:
        logits = next_token_logits(params, sample, cfg, noise=noise)
        probs = _step_distribution(logits, vocab, sampler.temperature)
        support = nucleus_filter(probs, sampler.top_p)
        if sampler.greedy:
            token_id = int(support[0])
        else:
            support_probs = probs[support]
            support_probs /= support_probs.sum()
            token_id = int(rng.choice(support, p=support_probs))
        logprobs.append(float(np.log(probs[token_id])))
        sample = _grow(sample, token_id)
        if token_id == vocab.eot_id:
            stopped = True
            break
        new_ids.append(token_id)

    return GeneratedTurn(
        author=target,
        text=vocab.decode(new_ids),
        token_ids=new_ids,
        logprob=float(sum(logprobs)),
        token_logprobs=logprobs,
        stopped_on_eot=stopped,
        layout=sample,
    )


def generate_multi_turn(
    params: dict[str, Tensor],
    cfg: ModelConfig,
    conv: ConversationPath,
    store: UserReferenceStore,
    schedule: list[str],
    vocab: Vocabulary,
    sampler: SamplerConfig,
) -> tuple[ConversationPath, list[GeneratedTurn]]:
    """Append one sampled turn per scheduled speaker, re-encoding each step.

    Every step selects the scheduled speaker's references; derived per-step
    seeds keep the whole exchange reproducible from one sampler seed.
    """
    generated: list[GeneratedTurn] = []
    current = conv
    for step, target in enumerate(schedule):
        step_seed = np.random.SeedSequence((sampler.seed, step)).generate_state(1)[0]
        turn = sample_turn(
            params, cfg, current, store, target, vocab, replace(sampler, seed=int(step_seed))
        )
        generated.append(turn)
        new_turn = Turn(
            comment_id=f"generated/{conv.conversation_id}/{len(current.turns)}",
            author=target,
            text=turn.text,
            score=0,
        )
        current = ConversationPath(
            conversation_id=current.conversation_id,
            post_id=current.post_id,
            turns=current.turns + (new_turn,),
        )
    return current, generated
