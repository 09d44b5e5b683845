"""Reference-conditioned transformer variants producing next-token logits.

Four architectures share one GPT-2-style block (pre-norm, learned absolute
positions, tied output head):

  dec  one causal decoder over the packed reference+conversation sequence
  nrc  dec restricted to an empty reference segment (pure data ablation)
  s2s  bidirectional encoder over the references, causal decoder over the
       conversation with cross-attention to the encoder output states
  vae  bidirectional encoder pooled through a classification slot into a
       normal latent whose sample is prepended to the decoder input
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .encoding import EncodedSample

VARIANTS = ("dec", "s2s", "vae", "nrc")


class ModelError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    hidden_size: int
    n_layers: int
    n_heads: int
    vocab_size: int
    type_vocab: int = 4
    max_positions: int = 1024
    variant: str = "dec"
    latent_dim: Optional[int] = None
    mlp_ratio: int = 4
    dropout: float = 0.0

    def __post_init__(self) -> None:
        if self.variant not in VARIANTS:
            raise ModelError(f"unknown variant {self.variant!r}")
        if self.hidden_size % self.n_heads != 0:
            raise ModelError("hidden_size must be divisible by n_heads")
        if self.variant == "vae" and not self.latent_dim:
            raise ModelError("vae variant requires latent_dim")
        if self.dropout != 0.0:
            raise ModelError("nonzero dropout is not exercised at this scale")

    @property
    def head_dim(self) -> int:
        return self.hidden_size // self.n_heads

    @property
    def has_encoder(self) -> bool:
        return self.variant in ("s2s", "vae")

    def to_dict(self) -> dict:
        return {
            "hidden_size": self.hidden_size,
            "n_layers": self.n_layers,
            "n_heads": self.n_heads,
            "vocab_size": self.vocab_size,
            "type_vocab": self.type_vocab,
            "max_positions": self.max_positions,
            "variant": self.variant,
            "latent_dim": self.latent_dim,
            "mlp_ratio": self.mlp_ratio,
            "dropout": self.dropout,
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "ModelConfig":
        return cls(**obj)


def _block_shapes(prefix: str, cfg: ModelConfig, cross_attention: bool):
    h = cfg.hidden_size
    m = cfg.mlp_ratio * h
    shapes = [
        (f"{prefix}.ln1.g", (h,), "ones"),
        (f"{prefix}.ln1.b", (h,), "zeros"),
        (f"{prefix}.attn.qkv.w", (h, 3 * h), "normal"),
        (f"{prefix}.attn.qkv.b", (3 * h,), "zeros"),
        (f"{prefix}.attn.proj.w", (h, h), "residual"),
        (f"{prefix}.attn.proj.b", (h,), "zeros"),
    ]
    if cross_attention:
        shapes += [
            (f"{prefix}.lnx.g", (h,), "ones"),
            (f"{prefix}.lnx.b", (h,), "zeros"),
            (f"{prefix}.xattn.q.w", (h, h), "normal"),
            (f"{prefix}.xattn.q.b", (h,), "zeros"),
            (f"{prefix}.xattn.kv.w", (h, 2 * h), "normal"),
            (f"{prefix}.xattn.kv.b", (2 * h,), "zeros"),
            (f"{prefix}.xattn.proj.w", (h, h), "residual"),
            (f"{prefix}.xattn.proj.b", (h,), "zeros"),
        ]
    shapes += [
        (f"{prefix}.ln2.g", (h,), "ones"),
        (f"{prefix}.ln2.b", (h,), "zeros"),
        (f"{prefix}.mlp.fc1.w", (h, m), "normal"),
        (f"{prefix}.mlp.fc1.b", (m,), "zeros"),
        (f"{prefix}.mlp.fc2.w", (m, h), "residual"),
        (f"{prefix}.mlp.fc2.b", (h,), "zeros"),
    ]
    return shapes


def param_shapes(cfg: ModelConfig) -> list[tuple[str, tuple[int, ...], str]]:
    """Ordered (name, shape, init kind) for every learned tensor.

    The output head is tied to the token embedding table, so it never
    appears here.
    """
    h = cfg.hidden_size
    shapes: list[tuple[str, tuple[int, ...], str]] = [
        ("tok_emb", (cfg.vocab_size, h), "normal"),
        ("type_emb", (cfg.type_vocab, h), "normal"),
        ("pos_emb", (cfg.max_positions, h), "normal"),
    ]
    cross = cfg.variant == "s2s"
    for i in range(cfg.n_layers):
        shapes.extend(_block_shapes(f"dec.{i}", cfg, cross_attention=cross))
    shapes += [("final_ln.g", (h,), "ones"), ("final_ln.b", (h,), "zeros")]
    if cfg.has_encoder:
        for i in range(cfg.n_layers):
            shapes.extend(_block_shapes(f"enc.{i}", cfg, cross_attention=False))
        shapes += [("enc_final_ln.g", (h,), "ones"), ("enc_final_ln.b", (h,), "zeros")]
    if cfg.variant == "vae":
        lat = cfg.latent_dim
        shapes += [
            ("cls_emb", (h,), "normal"),
            ("latent.stats.w", (h, 2 * lat), "normal"),
            ("latent.stats.b", (2 * lat,), "zeros"),
            ("latent.to_h.w", (lat, h), "normal"),
            ("latent.to_h.b", (h,), "zeros"),
        ]
    return shapes


def init_params(cfg: ModelConfig, seed: int, dtype: str = "f32") -> dict[str, Tensor]:
    """Normal(0, 0.02) weights, residual projections scaled by 1/sqrt(2*layers),
    zero biases, unit norm gains; deterministic per seed."""
    rng = np.random.default_rng(seed)
    residual_std = 0.02 / np.sqrt(2.0 * cfg.n_layers)
    params: dict[str, Tensor] = {}
    for name, shape, kind in param_shapes(cfg):
        if kind == "normal":
            data = rng.normal(0.0, 0.02, size=shape)
        elif kind == "residual":
            data = rng.normal(0.0, residual_std, size=shape)
        elif kind == "zeros":
            data = np.zeros(shape)
        elif kind == "ones":
            data = np.ones(shape)
        else:  # pragma: no cover
            raise ModelError(f"unknown init kind {kind}")
        params[name] = ag.parameter(data, dtype=dtype, name=name)
    return params


def count_params(cfg: ModelConfig) -> int:
    """Exact learned-scalar count under head tying, in closed form."""
    h = cfg.hidden_size
    m = cfg.mlp_ratio * h
    emb = cfg.vocab_size * h + cfg.type_vocab * h + cfg.max_positions * h
    block = 2 * (2 * h) + (h * 3 * h + 3 * h) + (h * h + h) + (h * m + m) + (m * h + h)
    cross = 2 * h + (h * h + h) + (h * 2 * h + 2 * h) + (h * h + h)
    total = emb + cfg.n_layers * block + 2 * h
    if cfg.variant == "s2s":
        total += cfg.n_layers * cross
    if cfg.has_encoder:
        total += cfg.n_layers * block + 2 * h
    if cfg.variant == "vae":
        lat = cfg.latent_dim
        total += h + (h * 2 * lat + 2 * lat) + (lat * h + h)
    return total


# ---------------------------------------------------------------------------
# forward passes
# ---------------------------------------------------------------------------


def _heads(x: Tensor, cfg: ModelConfig) -> Tensor:
    t = x.shape[0]
    return ag.transpose(ag.reshape(x, (t, cfg.n_heads, cfg.head_dim)), (1, 0, 2))


def _unheads(x: Tensor, cfg: ModelConfig) -> Tensor:
    t = x.shape[1]
    return ag.reshape(ag.transpose(x, (1, 0, 2)), (t, cfg.hidden_size))


def _self_attention(
    x: Tensor, params: dict[str, Tensor], prefix: str, cfg: ModelConfig, causal: bool
) -> Tensor:
    t = x.shape[0]
    qkv = ag.add(ag.matmul(x, params[f"{prefix}.qkv.w"]), params[f"{prefix}.qkv.b"])
    h = cfg.hidden_size
    q = _heads(ag.slice_axis(qkv, 1, 0, h), cfg)
    k = _heads(ag.slice_axis(qkv, 1, h, 2 * h), cfg)
    v = _heads(ag.slice_axis(qkv, 1, 2 * h, 3 * h), cfg)
    scores = ag.scale(ag.matmul(q, ag.transpose(k, (0, 2, 1))), 1.0 / np.sqrt(cfg.head_dim))
    mask = None
    if causal:
        mask = np.tril(np.ones((t, t), dtype=bool))[None, :, :]
    probs = ag.softmax(scores, axis=-1, mask=mask)
    ctx = _unheads(ag.matmul(probs, v), cfg)
    return ag.add(ag.matmul(ctx, params[f"{prefix}.proj.w"]), params[f"{prefix}.proj.b"])


def _cross_attention(
    x: Tensor, memory: Tensor, params: dict[str, Tensor], prefix: str, cfg: ModelConfig
) -> Optional[Tensor]:
    if memory.shape[0] == 0:
        return None  # empty reference memory contributes zeros
    q = _heads(ag.add(ag.matmul(x, params[f"{prefix}.q.w"]), params[f"{prefix}.q.b"]), cfg)
    kv = ag.add(ag.matmul(memory, params[f"{prefix}.kv.w"]), params[f"{prefix}.kv.b"])
    h = cfg.hidden_size
    k = _heads(ag.slice_axis(kv, 1, 0, h), cfg)
    v = _heads(ag.slice_axis(kv, 1, h, 2 * h), cfg)
    scores = ag.scale(ag.matmul(q, ag.transpose(k, (0, 2, 1))), 1.0 / np.sqrt(cfg.head_dim))
    probs = ag.softmax(scores, axis=-1)
    ctx = _unheads(ag.matmul(probs, v), cfg)
    return ag.add(ag.matmul(ctx, params[f"{prefix}.proj.w"]), params[f"{prefix}.proj.b"])


def _ln(x: Tensor, params: dict[str, Tensor], prefix: str) -> Tensor:
    return ag.layer_norm(x, params[f"{prefix}.g"], params[f"{prefix}.b"])


def _mlp(x: Tensor, params: dict[str, Tensor], prefix: str) -> Tensor:
    hidden = ag.gelu(ag.add(ag.matmul(x, params[f"{prefix}.fc1.w"]), params[f"{prefix}.fc1.b"]))
    return ag.add(ag.matmul(hidden, params[f"{prefix}.fc2.w"]), params[f"{prefix}.fc2.b"])


def _stack(
    x: Tensor,
    params: dict[str, Tensor],
    cfg: ModelConfig,
    side: str,
    causal: bool,
    memory: Optional[Tensor] = None,
) -> Tensor:
    for i in range(cfg.n_layers):
        prefix = f"{side}.{i}"
        x = ag.add(x, _self_attention(_ln(x, params, f"{prefix}.ln1"), params, f"{prefix}.attn", cfg, causal))
        if memory is not None:
            attended = _cross_attention(
                _ln(x, params, f"{prefix}.lnx"), memory, params, f"{prefix}.xattn", cfg
            )
            if attended is not None:
                x = ag.add(x, attended)
        x = ag.add(x, _mlp(_ln(x, params, f"{prefix}.ln2"), params, f"{prefix}.mlp"))
    return x


def _embed(
    params: dict[str, Tensor], ids, types, positions, cfg: ModelConfig
) -> Tensor:
    ids = np.asarray(ids, dtype=np.int64)
    positions = np.asarray(positions, dtype=np.int64)
    if positions.size and positions.max() >= cfg.max_positions:
        raise ModelError(
            f"sequence position {positions.max()} exceeds max_positions {cfg.max_positions}"
        )
    x = ag.embedding(params["tok_emb"], ids)
    x = ag.add(x, ag.embedding(params["type_emb"], np.asarray(types, dtype=np.int64)))
    return ag.add(x, ag.embedding(params["pos_emb"], positions))


def _tied_head(x: Tensor, params: dict[str, Tensor]) -> Tensor:
    return ag.matmul(x, ag.transpose(params["tok_emb"], (1, 0)))


@dataclass
class ForwardResult:
    logits: Tensor  # rows as produced by the variant; see next_token_alignment
    mu: Optional[Tensor] = None
    logvar: Optional[Tensor] = None


def forward_dec(params: dict[str, Tensor], sample: EncodedSample, cfg: ModelConfig) -> Tensor:
    """Single causal decoder over the whole packed sequence -> [L, vocab]."""
    if cfg.variant not in ("dec", "nrc"):
        raise ModelError(f"forward_dec called with variant {cfg.variant!r}")
    if cfg.variant == "nrc" and sample.ref_len != 0:
        raise ModelError("nrc decodes without reference material; got ref_len > 0")
    if len(sample.token_ids) > cfg.max_positions:
        raise ModelError("sample longer than max_positions")
    x = _embed(params, sample.token_ids, sample.type_ids, sample.position_ids, cfg)
    x = _stack(x, params, cfg, "dec", causal=True)
    return _tied_head(_ln(x, params, "final_ln"), params)


def _encode_references(params, sample: EncodedSample, cfg: ModelConfig, with_cls: bool) -> Tensor:
    r = sample.ref_len
    ids = sample.token_ids[:r]
    types = sample.type_ids[:r]
    if with_cls:
        # classification slot at position 0, reference tokens shifted right
        x_ref = _embed(params, ids, types, list(range(1, r + 1)), cfg) if r else None
        cls_vec = ag.add(
            ag.reshape(params["cls_emb"], (1, cfg.hidden_size)),
            ag.embedding(params["pos_emb"], np.asarray([0], dtype=np.int64)),
        )
        x = ag.concat([cls_vec, x_ref], axis=0) if x_ref is not None else cls_vec
    else:
        x = _embed(params, ids, types, list(range(r)), cfg)
    x = _stack(x, params, cfg, "enc", causal=False)
    return _ln(x, params, "enc_final_ln")


def forward_s2s(params: dict[str, Tensor], sample: EncodedSample, cfg: ModelConfig) -> Tensor:
    """Bidirectional reference encoder + causal conversation decoder
    cross-attending to the encoder's output states -> [conv_len, vocab]."""
    if cfg.variant != "s2s":
        raise ModelError(f"forward_s2s called with variant {cfg.variant!r}")
    if len(sample.token_ids) > cfg.max_positions:
        raise ModelError("sample longer than max_positions")
    r = sample.ref_len
    memory = (
        _encode_references(params, sample, cfg, with_cls=False)
        if r
        else Tensor(np.zeros((0, cfg.hidden_size), dtype=params["tok_emb"].data.dtype))
    )
    x = _embed(
        params,
        sample.token_ids[r:],
        sample.type_ids[r:],
        sample.position_ids[r:],
        cfg,
    )
    x = _stack(x, params, cfg, "dec", causal=True, memory=memory)
    return _tied_head(_ln(x, params, "final_ln"), params)


def forward_vae(
    params: dict[str, Tensor],
    sample: EncodedSample,
    cfg: ModelConfig,
    noise: Optional[np.ndarray] = None,
) -> ForwardResult:
    """Latent-conditioned decoder -> logits [conv_len+1, vocab] plus (mu, logvar).

    The latent sample sits in the decoder's slot 0, so output row j scores
    conversation token j; noise=None means epsilon = 0 (deterministic).
    """
    if cfg.variant != "vae":
        raise ModelError(f"forward_vae called with variant {cfg.variant!r}")
    if len(sample.token_ids) > cfg.max_positions:
        raise ModelError("sample longer than max_positions")
    enc = _encode_references(params, sample, cfg, with_cls=True)
    cls_state = ag.slice_axis(enc, 0, 0, 1)
    stats = ag.add(ag.matmul(cls_state, params["latent.stats.w"]), params["latent.stats.b"])
    lat = cfg.latent_dim
    mu = ag.reshape(ag.slice_axis(stats, 1, 0, lat), (lat,))
    logvar = ag.reshape(ag.slice_axis(stats, 1, lat, 2 * lat), (lat,))
    if noise is None:
        z = mu
    else:
        eps = Tensor(np.asarray(noise, dtype=mu.data.dtype))
        if eps.shape != (lat,):
            raise ModelError(f"noise must have shape ({lat},)")
        z = ag.add(mu, ag.mul(exp_half(logvar), eps))
    z_h = ag.add(ag.matmul(ag.reshape(z, (1, lat)), params["latent.to_h.w"]), params["latent.to_h.b"])

    r = sample.ref_len
    conv_len = sample.conv_len
    z_slot = ag.add(z_h, ag.embedding(params["pos_emb"], np.asarray([0], dtype=np.int64)))
    if conv_len:
        conv = _embed(
            params,
            sample.token_ids[r:],
            sample.type_ids[r:],
            list(range(1, conv_len + 1)),
            cfg,
        )
        x = ag.concat([z_slot, conv], axis=0)
    else:
        x = z_slot
    x = _stack(x, params, cfg, "dec", causal=True)
    logits = _tied_head(_ln(x, params, "final_ln"), params)
    return ForwardResult(logits=logits, mu=mu, logvar=logvar)


def exp_half(logvar: Tensor) -> Tensor:
    """exp(logvar / 2), the standard deviation of the latent."""
    return ag.exp(ag.scale(logvar, 0.5))


def forward(
    params: dict[str, Tensor],
    sample: EncodedSample,
    cfg: ModelConfig,
    noise: Optional[np.ndarray] = None,
) -> ForwardResult:
    if cfg.variant in ("dec", "nrc"):
        return ForwardResult(logits=forward_dec(params, sample, cfg))
    if cfg.variant == "s2s":
        return ForwardResult(logits=forward_s2s(params, sample, cfg))
    return forward_vae(params, sample, cfg, noise=noise)


def next_token_alignment(
    result: ForwardResult, sample: EncodedSample, cfg: ModelConfig
) -> tuple[Tensor, np.ndarray, np.ndarray]:
    """Pair logit rows with the tokens they predict and the loss mask.

    dec/nrc score the packed sequence shifted by one; s2s scores within the
    conversation segment; vae's latent slot lets it score the segment's very
    first token as well.
    """
    r = sample.ref_len
    if cfg.variant in ("dec", "nrc"):
        rows = ag.slice_axis(result.logits, 0, 0, len(sample.token_ids) - 1)
        targets = np.asarray(sample.token_ids[1:], dtype=np.int64)
        mask = np.asarray(sample.loss_mask[1:], dtype=np.int64)
    elif cfg.variant == "s2s":
        rows = ag.slice_axis(result.logits, 0, 0, sample.conv_len - 1)
        targets = np.asarray(sample.token_ids[r + 1 :], dtype=np.int64)
        mask = np.asarray(sample.loss_mask[r + 1 :], dtype=np.int64)
    else:
        rows = ag.slice_axis(result.logits, 0, 0, sample.conv_len)
        targets = np.asarray(sample.token_ids[r:], dtype=np.int64)
        mask = np.asarray(sample.loss_mask[r:], dtype=np.int64)
    return rows, targets, mask


def next_token_logits(
    params: dict[str, Tensor],
    sample: EncodedSample,
    cfg: ModelConfig,
    noise: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Logits for the token that would follow the sample's last position."""
    result = forward(params, sample, cfg, noise=noise)
    return result.logits.data[-1]
