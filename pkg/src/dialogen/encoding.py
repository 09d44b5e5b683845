"""Packed model inputs: reference segment + conversation segment.

A sample concatenates the target speaker's reference history (token types
P/R for parent/reply) with the conversation turns (types S/NS for target and
non-target speakers). Loss is masked to the target speaker's tokens. The
reference segment truncates from the end, the conversation from the
beginning, each to 512 tokens, for a packed maximum of 1024.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum

from .bpe import Vocabulary
from .extract import ConversationPath, ReferenceTuple, UserReferenceStore

REF_MAX_TOKENS = 512
CONV_MAX_TOKENS = 512
MAX_SEQUENCE = REF_MAX_TOKENS + CONV_MAX_TOKENS


class TokenType(IntEnum):
    REF_PARENT = 0  # P
    REF_REPLY = 1  # R
    CONV_TARGET = 2  # S
    CONV_OTHER = 3  # NS


class EncodingError(ValueError):
    pass


@dataclass
class EncodedSample:
    token_ids: list[int]
    type_ids: list[int]
    position_ids: list[int]
    loss_mask: list[int]
    ref_len: int
    conv_len: int
    target_speaker: str

    def __len__(self) -> int:
        return len(self.token_ids)

    def validate(self) -> None:
        length = len(self.token_ids)
        if not (
            len(self.type_ids) == len(self.position_ids) == len(self.loss_mask) == length
        ):
            raise EncodingError("sample lists have unequal lengths")
        if self.ref_len + self.conv_len != length:
            raise EncodingError("ref_len + conv_len must equal sample length")
        if self.ref_len > REF_MAX_TOKENS or self.conv_len > CONV_MAX_TOKENS:
            raise EncodingError("segment exceeds its 512-token cap")
        if self.position_ids != list(range(length)):
            raise EncodingError("positions must be 0..L-1")
        for i in range(length):
            in_ref = i < self.ref_len
            if in_ref != (self.type_ids[i] in (TokenType.REF_PARENT, TokenType.REF_REPLY)):
                raise EncodingError(f"type discipline violated at position {i}")
            if self.loss_mask[i] == 1 and self.type_ids[i] != TokenType.CONV_TARGET:
                raise EncodingError(f"loss mask set on non-target position {i}")


def select_references(
    conv: ConversationPath, store: UserReferenceStore, target: str
) -> list[ReferenceTuple]:
    """The target's stored tuples minus any whose reply is a turn of conv.

    An author missing from the store degenerates to an empty reference
    history, which is the no-reference-context model's input.
    """
    conv_ids = conv.comment_ids()
    return [t for t in store.for_author(target) if t.reply_id not in conv_ids]


def encode_reference_history(
    refs: list[ReferenceTuple], vocab: Vocabulary
) -> tuple[list[int], list[int]]:
    """Tokenize reference tuples as [SEP parent] [SEP reply] blocks.

    Each separator carries the type of the comment it opens; a tuple without
    a parent contributes only its reply block. Anything past 512 tokens is
    cut from the end.
    """
    ids: list[int] = []
    types: list[int] = []
    for ref in refs:
        if ref.parent_text is not None:
            parent_ids = vocab.encode(ref.parent_text)
            ids.append(vocab.sep_id)
            types.append(TokenType.REF_PARENT)
            ids.extend(parent_ids)
            types.extend([TokenType.REF_PARENT] * len(parent_ids))
        reply_ids = vocab.encode(ref.reply_text)
        ids.append(vocab.sep_id)
        types.append(TokenType.REF_REPLY)
        ids.extend(reply_ids)
        types.extend([TokenType.REF_REPLY] * len(reply_ids))
    return ids[:REF_MAX_TOKENS], types[:REF_MAX_TOKENS]


def _encode_turns(
    conv: ConversationPath, target: str, vocab: Vocabulary, keep_all_turns: bool
) -> tuple[list[int], list[int], list[int]]:
    turns = list(conv.turns)
    if not keep_all_turns:
        last = max(
            (i for i, t in enumerate(turns) if t.author == target), default=None
        )
        if last is None:
            raise EncodingError(f"target speaker {target!r} has no turn in conversation")
        turns = turns[: last + 1]

    ids = [vocab.sot_id]
    types = [int(TokenType.CONV_OTHER)]  # the start marker belongs to no speaker
    mask = [0]
    for turn in turns:
        turn_ids = vocab.encode(turn.text) + [vocab.eot_id]
        is_target = turn.author == target
        turn_type = TokenType.CONV_TARGET if is_target else TokenType.CONV_OTHER
        ids.extend(turn_ids)
        types.extend([int(turn_type)] * len(turn_ids))
        mask.extend([1 if is_target else 0] * len(turn_ids))

    if len(ids) > CONV_MAX_TOKENS:
        drop = len(ids) - CONV_MAX_TOKENS  # from the beginning, start marker first
        ids, types, mask = ids[drop:], types[drop:], mask[drop:]
    return ids, types, mask


def encode_conversation(
    conv: ConversationPath, target: str, vocab: Vocabulary
) -> tuple[list[int], list[int], list[int]]:
    """Tokenize conversation turns for one target speaker.

    Turns after the target's final turn are discarded. Every turn ends with
    the end-of-turn token, typed and masked with its turn. Overflow truncates
    from the beginning so late context survives.
    """
    return _encode_turns(conv, target, vocab, keep_all_turns=False)


def encode_generation_context(
    conv: ConversationPath, target: str, vocab: Vocabulary
) -> tuple[list[int], list[int], list[int]]:
    """Like encode_conversation but keeps every turn.

    Used when sampling a brand-new turn for the target, whose (empty) turn
    conceptually follows the current final turn. The target may have no
    prior turn in the conversation.
    """
    return _encode_turns(conv, target, vocab, keep_all_turns=True)


def assemble_sample(
    ref_segment: tuple[list[int], list[int]],
    conv_segment: tuple[list[int], list[int], list[int]],
    target: str,
) -> EncodedSample:
    """Concatenate reference then conversation with global positions."""
    ref_ids, ref_types = ref_segment
    conv_ids, conv_types, conv_mask = conv_segment
    sample = EncodedSample(
        token_ids=ref_ids + conv_ids,
        type_ids=ref_types + conv_types,
        position_ids=list(range(len(ref_ids) + len(conv_ids))),
        loss_mask=[0] * len(ref_ids) + conv_mask,
        ref_len=len(ref_ids),
        conv_len=len(conv_ids),
        target_speaker=target,
    )
    sample.validate()
    return sample


def encode_for_target(
    conv: ConversationPath,
    store: UserReferenceStore,
    target: str,
    vocab: Vocabulary,
    include_references: bool = True,
) -> EncodedSample:
    refs = select_references(conv, store, target) if include_references else []
    ref_segment = encode_reference_history(refs, vocab)
    conv_segment = encode_conversation(conv, target, vocab)
    return assemble_sample(ref_segment, conv_segment, target)


def expand_per_speaker(
    conv: ConversationPath,
    store: UserReferenceStore,
    vocab: Vocabulary,
    include_references: bool = True,
) -> list[EncodedSample]:
    """One sample per distinct author, each with its own references and mask."""
    return [
        encode_for_target(conv, store, author, vocab, include_references)
        for author in conv.authors
    ]
