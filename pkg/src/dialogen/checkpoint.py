"""Named-tensor checkpoint container.

Layout (little-endian):
  magic    4 bytes b"DGCK"
  version  uint32
  header   uint32 byte length + canonical JSON
           {"config": {...}, "tokenizer_hash": str, "meta": {...}}
  count    uint32
  tensors  per tensor: uint16 name length + UTF-8 name, uint8 ndim,
           ndim x uint32 dims, uint8 dtype (0=f32, 1=f64), raw values

Reload is bit-exact. Optimizer moments ride along under an "opt." name
prefix so training can resume mid-run from the same file.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .formats import canonical_json
from .model import ModelConfig

MAGIC = b"DGCK"
VERSION = 1
_DTYPE_CODES = {"f32": 0, "f64": 1}
_DTYPE_NAMES = {0: "<f4", 1: "<f8"}


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    config: ModelConfig
    params: dict[str, Tensor]
    tokenizer_hash: str
    meta: dict = field(default_factory=dict)
    opt_state: dict[str, np.ndarray] = field(default_factory=dict)

    def trainable(self) -> dict[str, Tensor]:
        return self.params


def _write_tensor(fh, name: str, arr: np.ndarray) -> None:
    encoded = name.encode("utf-8")
    fh.write(struct.pack("<H", len(encoded)))
    fh.write(encoded)
    fh.write(struct.pack("<B", arr.ndim))
    for dim in arr.shape:
        fh.write(struct.pack("<I", dim))
    code = 0 if arr.dtype == np.float32 else 1
    fh.write(struct.pack("<B", code))
    fh.write(np.ascontiguousarray(arr, dtype=_DTYPE_NAMES[code]).tobytes())


def _read_tensor(fh) -> tuple[str, np.ndarray]:
    (name_len,) = struct.unpack("<H", fh.read(2))
    name = fh.read(name_len).decode("utf-8")
    (ndim,) = struct.unpack("<B", fh.read(1))
    shape = tuple(struct.unpack("<I", fh.read(4))[0] for _ in range(ndim))
    (code,) = struct.unpack("<B", fh.read(1))
    count = int(np.prod(shape)) if shape else 1
    dtype = np.dtype(_DTYPE_NAMES[code])
    raw = fh.read(count * dtype.itemsize)
    if len(raw) != count * dtype.itemsize:
        raise CheckpointError("truncated tensor data")
    return name, np.frombuffer(raw, dtype=dtype).reshape(shape).copy()


def save_checkpoint(path: str, ckpt: Checkpoint) -> None:
    header = canonical_json(
        {
            "config": ckpt.config.to_dict(),
            "tokenizer_hash": ckpt.tokenizer_hash,
            "meta": ckpt.meta,
        }
    ).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        names = list(ckpt.params) + list(ckpt.opt_state)
        fh.write(struct.pack("<I", len(names)))
        for name, tensor in ckpt.params.items():
            _write_tensor(fh, name, tensor.data)
        for name, arr in ckpt.opt_state.items():
            _write_tensor(fh, f"opt.{name}", arr)


def load_checkpoint(path: str) -> Checkpoint:
    with open(path, "rb") as fh:
        if fh.read(4) != MAGIC:
            raise CheckpointError(f"{path} is not a checkpoint")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}")
        (header_len,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(header_len).decode("utf-8"))
        (count,) = struct.unpack("<I", fh.read(4))
        params: dict[str, Tensor] = {}
        opt_state: dict[str, np.ndarray] = {}
        for _ in range(count):
            name, arr = _read_tensor(fh)
            if name.startswith("opt."):
                opt_state[name[4:]] = arr
            else:
                params[name] = ag.parameter(
                    arr, dtype="f32" if arr.dtype == np.float32 else "f64", name=name
                )
    return Checkpoint(
        config=ModelConfig.from_dict(header["config"]),
        params=params,
        tokenizer_hash=header["tokenizer_hash"],
        meta=header.get("meta", {}),
        opt_state=opt_state,
    )
