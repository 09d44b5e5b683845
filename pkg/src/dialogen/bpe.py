"""Byte-level BPE tokenizer: training, encoding, decoding, special tokens.

Tokens are byte strings. The base alphabet is the 256 single bytes, merges
extend it, and four special tokens (start-of-conversation, end-of-turn,
reference separator, padding) sit at the top of the id space. Plain-text
encoding can never produce a special id.
"""

from __future__ import annotations

import hashlib
from collections import Counter
from dataclasses import dataclass, field

N_BASE = 256

# Escape strings used when decoding special ids back to text.
SOT_TEXT = "<sot>"
EOT_TEXT = "<eot>"
SEP_TEXT = "<sep>"
PAD_TEXT = "<pad>"
SPECIAL_TEXTS = (SOT_TEXT, EOT_TEXT, SEP_TEXT, PAD_TEXT)
N_SPECIALS = len(SPECIAL_TEXTS)

DEFAULT_VOCAB_SIZE = 8192

FORMAT_HEADER = "dialogen-bpe v1"


class TokenizerError(ValueError):
    pass


def pretokenize(text: str) -> list[str]:
    """Split text into pretokens at whitespace boundaries.

    A whitespace run attaches to the pretoken that follows it, so "a b"
    becomes ["a", " b"]; a trailing whitespace run with nothing after it
    forms its own pretoken. Merges never cross pretoken boundaries, which
    makes encoding context-free per pretoken.
    """
    pieces: list[str] = []
    start = 0
    i = 0
    n = len(text)
    while i < n:
        if text[i].isspace():
            # Consume the whitespace run plus the word after it.
            j = i
            while j < n and text[j].isspace():
                j += 1
            while j < n and not text[j].isspace():
                j += 1
            if i > start:
                pieces.append(text[start:i])
            pieces.append(text[i:j])
            start = j
            i = j
        else:
            i += 1
    if start < n:
        pieces.append(text[start:])
    return pieces


def _merge_word(word: list[bytes], left: bytes, right: bytes) -> list[bytes]:
    """Merge all left/right adjacencies in one pass, left to right."""
    out: list[bytes] = []
    i = 0
    while i < len(word):
        if i + 1 < len(word) and word[i] == left and word[i + 1] == right:
            out.append(left + right)
            i += 2
        else:
            out.append(word[i])
            i += 1
    return out


@dataclass
class Vocabulary:
    """A trained byte-level BPE vocabulary.

    Ids are dense in [0, size): single bytes occupy [0, 256), learned merges
    follow in rank order, and the four specials hold the top four ids.
    """

    merges: list[tuple[bytes, bytes]]
    _ranks: dict[tuple[bytes, bytes], int] = field(init=False, repr=False)
    _token_to_id: dict[bytes, int] = field(init=False, repr=False)

    def __post_init__(self) -> None:
        self._ranks = {pair: i for i, pair in enumerate(self.merges)}
        self._token_to_id = {bytes([b]): b for b in range(N_BASE)}
        for i, (left, right) in enumerate(self.merges):
            self._token_to_id[left + right] = N_BASE + i

    @property
    def size(self) -> int:
        return N_BASE + len(self.merges) + N_SPECIALS

    @property
    def first_special_id(self) -> int:
        return self.size - N_SPECIALS

    @property
    def sot_id(self) -> int:
        return self.first_special_id

    @property
    def eot_id(self) -> int:
        return self.first_special_id + 1

    @property
    def sep_id(self) -> int:
        return self.first_special_id + 2

    @property
    def pad_id(self) -> int:
        return self.first_special_id + 3

    def token_bytes(self, token_id: int) -> bytes:
        if token_id < N_BASE:
            return bytes([token_id])
        if token_id < self.first_special_id:
            left, right = self.merges[token_id - N_BASE]
            return left + right
        raise TokenizerError(f"id {token_id} is a special token, not bytes")

    def _encode_word(self, word_bytes: bytes) -> list[int]:
        word = [bytes([b]) for b in word_bytes]
        while len(word) > 1:
            best_rank = None
            best_pair = None
            for pair in zip(word, word[1:]):
                rank = self._ranks.get(pair)
                if rank is not None and (best_rank is None or rank < best_rank):
                    best_rank = rank
                    best_pair = pair
            if best_pair is None:
                break
            word = _merge_word(word, *best_pair)
        return [self._token_to_id[tok] for tok in word]

    def encode(self, text: str) -> list[int]:
        """Encode UTF-8 text; never emits special ids."""
        ids: list[int] = []
        for piece in pretokenize(text):
            ids.extend(self._encode_word(piece.encode("utf-8")))
        return ids

    def decode(self, ids: list[int]) -> str:
        """Expand ids back to text; special ids render as their escape strings."""
        parts: list[str] = []
        buf = bytearray()
        for token_id in ids:
            if token_id < 0 or token_id >= self.size:
                raise TokenizerError(f"unknown token id {token_id}")
            if token_id >= self.first_special_id:
                if buf:
                    parts.append(buf.decode("utf-8", errors="replace"))
                    buf = bytearray()
                parts.append(SPECIAL_TEXTS[token_id - self.first_special_id])
            else:
                buf.extend(self.token_bytes(token_id))
        if buf:
            parts.append(buf.decode("utf-8", errors="replace"))
        return "".join(parts)

    def save(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.serialize())

    def serialize(self) -> str:
        lines = [f"{FORMAT_HEADER} size={self.size}"]
        for left, right in self.merges:
            lines.append(f"{_escape(left)} {_escape(right)}")
        lines.append("[specials]")
        for name, token_id in zip(
            ("sot", "eot", "sep", "pad"),
            (self.sot_id, self.eot_id, self.sep_id, self.pad_id),
        ):
            lines.append(f"{name}={token_id}")
        return "\n".join(lines) + "\n"

    def content_hash(self) -> str:
        return hashlib.sha256(self.serialize().encode("utf-8")).hexdigest()


def _escape(token: bytes) -> str:
    out = []
    for b in token:
        if 0x21 <= b <= 0x7E and b != 0x5C:  # printable ASCII except backslash
            out.append(chr(b))
        else:
            out.append(f"\\x{b:02x}")
    return "".join(out)


def _unescape(text: str) -> bytes:
    out = bytearray()
    i = 0
    while i < len(text):
        if text[i] == "\\":
            if i + 3 >= len(text) or text[i + 1] != "x":
                raise TokenizerError(f"bad escape in tokenizer file: {text!r}")
            out.append(int(text[i + 2 : i + 4], 16))
            i += 4
        else:
            out.append(ord(text[i]))
            i += 1
    return bytes(out)


def load_vocabulary(path: str) -> Vocabulary:
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines or not lines[0].startswith(FORMAT_HEADER):
        raise TokenizerError(f"not a tokenizer file: {path}")
    declared = int(lines[0].rsplit("size=", 1)[1])
    merges: list[tuple[bytes, bytes]] = []
    i = 1
    while i < len(lines) and lines[i] != "[specials]":
        left_s, right_s = lines[i].split(" ")
        merges.append((_unescape(left_s), _unescape(right_s)))
        i += 1
    vocab = Vocabulary(merges)
    if vocab.size != declared:
        raise TokenizerError(
            f"tokenizer file declares size {declared} but holds {vocab.size}"
        )
    return vocab


def train_bpe(corpus, target_size: int = DEFAULT_VOCAB_SIZE) -> Vocabulary:
    """Learn merges by greedy highest-frequency pair merging.

    Stops at target_size or when no pair occurs at least twice. Frequency
    ties break to the lexicographically smallest (left, right) pair, so the
    result is deterministic for a given corpus.
    """
    if target_size < N_BASE + N_SPECIALS:
        raise TokenizerError(
            f"target_size {target_size} below minimum {N_BASE + N_SPECIALS}"
        )
    word_counts: Counter[tuple[bytes, ...]] = Counter()
    for text in corpus:
        for piece in pretokenize(text):
            raw = piece.encode("utf-8")
            word_counts[tuple(bytes([b]) for b in raw)] += 1

    max_merges = target_size - N_BASE - N_SPECIALS
    merges: list[tuple[bytes, bytes]] = []
    words = dict(word_counts)
    while len(merges) < max_merges:
        pair_counts: Counter[tuple[bytes, bytes]] = Counter()
        for word, count in words.items():
            for pair in zip(word, word[1:]):
                pair_counts[pair] += count
        if not pair_counts:
            break
        best_count = max(pair_counts.values())
        if best_count < 2:
            break
        best_pair = min(p for p, c in pair_counts.items() if c == best_count)
        merges.append(best_pair)
        next_words: dict[tuple[bytes, ...], int] = {}
        for word, count in words.items():
            merged = tuple(_merge_word(list(word), *best_pair))
            next_words[merged] = next_words.get(merged, 0) + count
        words = next_words
    return Vocabulary(merges)
