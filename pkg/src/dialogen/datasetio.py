"""Binary container for encoded datasets.

Layout (all integers little-endian):
  magic        4 bytes  b"DGDS"
  version      uint32
  vocab hash   64 bytes ascii hex (sha256 of the tokenizer file)
  sample count uint32
then per sample:
  target speaker  uint16 byte length + UTF-8 bytes
  ref_len         uint32
  conv_len        uint32
  L               uint32
  token_ids, type_ids, position_ids, loss_mask   each L x int32

Reload is bit-exact: writing the loaded samples reproduces the file.
"""

from __future__ import annotations

import struct
from typing import Iterable

import numpy as np

from .encoding import EncodedSample

MAGIC = b"DGDS"
VERSION = 1


class DatasetFormatError(ValueError):
    pass


def write_dataset(path: str, samples: Iterable[EncodedSample], vocab_hash: str) -> int:
    samples = list(samples)
    if len(vocab_hash) != 64:
        raise DatasetFormatError("vocab hash must be a 64-char sha256 hex digest")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(vocab_hash.encode("ascii"))
        fh.write(struct.pack("<I", len(samples)))
        for sample in samples:
            speaker = sample.target_speaker.encode("utf-8")
            fh.write(struct.pack("<H", len(speaker)))
            fh.write(speaker)
            fh.write(
                struct.pack("<III", sample.ref_len, sample.conv_len, len(sample.token_ids))
            )
            for values in (
                sample.token_ids,
                sample.type_ids,
                sample.position_ids,
                sample.loss_mask,
            ):
                fh.write(np.asarray(values, dtype="<i4").tobytes())
    return len(samples)


def read_dataset(path: str) -> tuple[list[EncodedSample], str]:
    with open(path, "rb") as fh:
        if fh.read(4) != MAGIC:
            raise DatasetFormatError(f"{path} is not an encoded dataset")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != VERSION:
            raise DatasetFormatError(f"unsupported dataset version {version}")
        vocab_hash = fh.read(64).decode("ascii")
        (count,) = struct.unpack("<I", fh.read(4))
        samples: list[EncodedSample] = []
        for _ in range(count):
            (speaker_len,) = struct.unpack("<H", fh.read(2))
            speaker = fh.read(speaker_len).decode("utf-8")
            ref_len, conv_len, length = struct.unpack("<III", fh.read(12))
            lists = []
            for _ in range(4):
                raw = fh.read(4 * length)
                if len(raw) != 4 * length:
                    raise DatasetFormatError(f"truncated sample data in {path}")
                lists.append(np.frombuffer(raw, dtype="<i4").tolist())
            samples.append(
                EncodedSample(
                    token_ids=lists[0],
                    type_ids=lists[1],
                    position_ids=lists[2],
                    loss_mask=lists[3],
                    ref_len=ref_len,
                    conv_len=conv_len,
                    target_speaker=speaker,
                )
            )
    return samples, vocab_hash
