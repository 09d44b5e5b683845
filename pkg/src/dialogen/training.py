"""Maximum-likelihood training: schedule, Adam, batching, the loop.

The learning rate warms up linearly over the first fraction of iterations
and then follows a cosine decay to zero. Adam runs with default
hyperparameters after a global-norm gradient clip. Batches pad to the batch
maximum with the padding id, and each sample inside a batch is scored at its
true length, so padded positions never see attention or loss.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from typing import Iterator, Optional

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .bpe import Vocabulary
from .checkpoint import Checkpoint, save_checkpoint
from .encoding import EncodedSample
from .model import ForwardResult, ModelConfig, forward, init_params, next_token_alignment


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    total_iters: int
    batch_size: int = 8
    peak_lr: float = 1.5e-4
    warmup_fraction: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    grad_clip_norm: float = 1.0
    seed: int = 0
    kl_weight: float = 1.0
    checkpoint_every: int = 0  # 0 = only the final checkpoint

    def __post_init__(self) -> None:
        if not (0 < self.warmup_fraction < 1):
            raise ValueError("warmup_fraction must be in (0, 1)")
        if self.peak_lr <= 0:
            raise ValueError("peak_lr must be positive")

    def to_dict(self) -> dict:
        return {
            "total_iters": self.total_iters,
            "batch_size": self.batch_size,
            "peak_lr": self.peak_lr,
            "warmup_fraction": self.warmup_fraction,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "adam_eps": self.adam_eps,
            "grad_clip_norm": self.grad_clip_norm,
            "seed": self.seed,
            "kl_weight": self.kl_weight,
            "checkpoint_every": self.checkpoint_every,
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "TrainConfig":
        return cls(**obj)


def lr_at(iteration: int, cfg: TrainConfig) -> float:
    """Linear 0 -> peak over the warmup window, then cosine decay to 0."""
    total = cfg.total_iters
    warmup = max(1, math.ceil(cfg.warmup_fraction * total))
    if iteration < warmup:
        return cfg.peak_lr * iteration / warmup
    if total <= warmup:
        return cfg.peak_lr
    progress = (iteration - warmup) / (total - warmup)
    return cfg.peak_lr * 0.5 * (1.0 + math.cos(math.pi * progress))


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0

    @classmethod
    def fresh(cls, params: dict[str, Tensor]) -> "AdamState":
        return cls(
            m={k: np.zeros_like(p.data) for k, p in params.items()},
            v={k: np.zeros_like(p.data) for k, p in params.items()},
            step=0,
        )

    def to_flat(self) -> dict[str, np.ndarray]:
        out = {f"m.{k}": v for k, v in self.m.items()}
        out.update({f"v.{k}": v for k, v in self.v.items()})
        return out

    @classmethod
    def from_flat(cls, flat: dict[str, np.ndarray], step: int) -> "AdamState":
        m = {k[2:]: v for k, v in flat.items() if k.startswith("m.")}
        v = {k[2:]: v for k, v in flat.items() if k.startswith("v.")}
        return cls(m=m, v=v, step=step)


def clip_global_norm(grads: dict[str, np.ndarray], max_norm: float) -> float:
    """Scale all gradients down so their joint L2 norm is at most max_norm."""
    total = math.sqrt(sum(float((g * g).sum()) for g in grads.values()))
    if max_norm > 0 and total > max_norm:
        factor = max_norm / total
        for g in grads.values():
            g *= factor
    return total


def adam_step(
    params: dict[str, Tensor],
    grads: dict[str, np.ndarray],
    state: AdamState,
    lr: float,
    cfg: TrainConfig,
) -> None:
    for name, grad in grads.items():
        if not np.all(np.isfinite(grad)):
            raise TrainingError(f"non-finite gradient for tensor {name!r}")
    clip_global_norm(grads, cfg.grad_clip_norm)
    state.step += 1
    t = state.step
    bias1 = 1.0 - cfg.beta1**t
    bias2 = 1.0 - cfg.beta2**t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        m = state.m[name]
        v = state.v[name]
        m *= cfg.beta1
        m += (1.0 - cfg.beta1) * g
        v *= cfg.beta2
        v += (1.0 - cfg.beta2) * (g * g)
        update = (m / bias1) / (np.sqrt(v / bias2) + cfg.adam_eps)
        p.data = p.data - (lr * update).astype(p.data.dtype)


@dataclass
class Batch:
    samples: list[EncodedSample]
    max_len: int
    token_ids: np.ndarray  # [B, max_len], padded
    pad_counts: list[int]


def make_batches(
    samples: list[EncodedSample],
    batch_size: int,
    seed: int,
    vocab: Vocabulary,
    epoch: int = 0,
) -> Iterator[Batch]:
    """Shuffled, padded batches for one epoch.

    The permutation depends only on (seed, epoch), so interrupted runs can
    reproduce their batch schedule exactly. Padding uses the pad id and is
    carried for layout only; scoring always slices each sample back to its
    true length.
    """
    rng = np.random.default_rng((seed, epoch))
    order = rng.permutation(len(samples))
    for start in range(0, len(samples), batch_size):
        chosen = [samples[i] for i in order[start : start + batch_size]]
        max_len = max(len(s) for s in chosen)
        ids = np.full((len(chosen), max_len), vocab.pad_id, dtype=np.int64)
        pads = []
        for row, sample in enumerate(chosen):
            ids[row, : len(sample)] = sample.token_ids
            pads.append(max_len - len(sample))
        yield Batch(samples=chosen, max_len=max_len, token_ids=ids, pad_counts=pads)


@dataclass
class LossParts:
    total: Tensor
    nll: float
    kl: float
    scored_tokens: int


def loss_for(
    sample: EncodedSample,
    result: ForwardResult,
    model_cfg: ModelConfig,
    kl_weight: float = 1.0,
) -> Optional[LossParts]:
    """Masked next-token cross entropy, plus the weighted KL term for vae.

    Mean-normalized within the masked set so differently sized masks stay
    comparable. Returns None when nothing is scoreable (the caller skips
    such samples with a warning).
    """
    rows, targets, mask = next_token_alignment(result, sample, model_cfg)
    if int(mask.sum()) == 0:
        return None
    nll = ag.cross_entropy(rows, targets, mask)
    total = nll
    kl_value = 0.0
    if result.mu is not None:
        # KL(N(mu, sigma^2) || N(0, I)) = -1/2 sum(1 + logvar - mu^2 - sigma^2)
        mu2 = ag.mul(result.mu, result.mu)
        sigma2 = ag.exp(result.logvar)
        inner = ag.sub(ag.sub(ag.add_const(result.logvar, 1.0), mu2), sigma2)
        kl = ag.scale(ag.sum_all(inner), -0.5)
        kl_value = kl_weight * kl.item()  # the logged term is the loss contribution
        if kl_weight != 0.0:
            total = ag.add(total, ag.scale(kl, kl_weight))
    return LossParts(total=total, nll=nll.item(), kl=kl_value, scored_tokens=int(mask.sum()))


def batch_loss(
    batch: Batch,
    params: dict[str, Tensor],
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    rng: Optional[np.random.Generator] = None,
) -> tuple[Optional[Tensor], float, float, int]:
    """Mean of per-sample losses; samples with empty masks are skipped."""
    parts: list[LossParts] = []
    for sample in batch.samples:
        noise = None
        if model_cfg.variant == "vae":
            noise = (
                rng.standard_normal(model_cfg.latent_dim)
                if rng is not None
                else np.zeros(model_cfg.latent_dim)
            )
        result = forward(params, sample, model_cfg, noise=noise)
        part = loss_for(sample, result, model_cfg, kl_weight=train_cfg.kl_weight)
        if part is not None:
            parts.append(part)
    if not parts:
        return None, 0.0, 0.0, 0
    total = parts[0].total
    for part in parts[1:]:
        total = ag.add(total, part.total)
    total = ag.scale(total, 1.0 / len(parts))
    mean_nll = sum(p.nll for p in parts) / len(parts)
    mean_kl = sum(p.kl for p in parts) / len(parts)
    tokens = sum(p.scored_tokens for p in parts)
    return total, mean_nll, mean_kl, tokens


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    metrics: list[dict]


def train_loop(
    samples: list[EncodedSample],
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    vocab: Vocabulary,
    tokenizer_hash: str = "",
    checkpoint_path: Optional[str] = None,
    metrics_path: Optional[str] = None,
    resume_from: Optional[Checkpoint] = None,
    log_every: int = 50,
    on_log=None,
) -> TrainResult:
    """Run exactly total_iters optimizer steps over shuffled sample batches.

    Deterministic per (seed, build): batch order derives from (seed, epoch)
    and vae noise from (seed, iteration), so resuming from a checkpoint at
    iteration k replays the identical trajectory.
    """
    if not samples:
        raise TrainingError("training needs a nonempty dataset")
    if resume_from is not None:
        params = resume_from.params
        state = AdamState.from_flat(resume_from.opt_state, resume_from.meta.get("adam_step", 0))
        start_iter = resume_from.meta.get("iteration", 0)
    else:
        params = init_params(model_cfg, seed=train_cfg.seed)
        state = AdamState.fresh(params)
        start_iter = 0

    batches_per_epoch = max(1, math.ceil(len(samples) / train_cfg.batch_size))
    metrics: list[dict] = []
    metrics_fh = open(metrics_path, "w", encoding="utf-8") if metrics_path else None
    if metrics_fh:
        metrics_fh.write("iter,lr,loss,kl,tokens_per_sec\n")

    epoch_iter: Iterator[Batch] = iter(())
    epoch = start_iter // batches_per_epoch
    offset = start_iter % batches_per_epoch
    epoch_iter = make_batches(samples, train_cfg.batch_size, train_cfg.seed, vocab, epoch)
    for _ in range(offset):
        next(epoch_iter, None)

    try:
        for iteration in range(start_iter, train_cfg.total_iters):
            batch = next(epoch_iter, None)
            if batch is None:
                epoch += 1
                epoch_iter = make_batches(
                    samples, train_cfg.batch_size, train_cfg.seed, vocab, epoch
                )
                batch = next(epoch_iter)

            started = time.perf_counter()
            rng = (
                np.random.default_rng((train_cfg.seed, iteration))
                if model_cfg.variant == "vae"
                else None
            )
            ag.zero_grads(params.values())
            total, nll, kl, tokens = batch_loss(batch, params, model_cfg, train_cfg, rng)
            if total is None:
                continue
            if not np.isfinite(total.item()):
                raise TrainingError(f"non-finite loss at iteration {iteration}")
            ag.backward(total)
            grads = {k: p.grad for k, p in params.items() if p.grad is not None}
            lr = lr_at(iteration, train_cfg)
            adam_step(params, grads, state, lr, train_cfg)
            elapsed = time.perf_counter() - started

            row = {
                "iter": iteration,
                "lr": lr,
                "loss": nll,
                "kl": kl,
                "tokens_per_sec": tokens / elapsed if elapsed > 0 else 0.0,
            }
            metrics.append(row)
            if metrics_fh:
                metrics_fh.write(
                    f"{row['iter']},{row['lr']:.10g},{row['loss']:.10g},"
                    f"{row['kl']:.10g},{row['tokens_per_sec']:.6g}\n"
                )
            if on_log and (iteration % log_every == 0 or iteration == train_cfg.total_iters - 1):
                on_log(row)

            if (
                checkpoint_path
                and train_cfg.checkpoint_every
                and (iteration + 1) % train_cfg.checkpoint_every == 0
            ):
                step_path = f"{checkpoint_path}.step{iteration + 1:06d}"
                _save(step_path, params, model_cfg, tokenizer_hash, train_cfg, state, iteration + 1)
    finally:
        if metrics_fh:
            metrics_fh.close()

    ckpt = _build_checkpoint(params, model_cfg, tokenizer_hash, train_cfg, state, train_cfg.total_iters)
    if checkpoint_path:
        save_checkpoint(checkpoint_path, ckpt)
    return TrainResult(checkpoint=ckpt, metrics=metrics)


def _build_checkpoint(params, model_cfg, tokenizer_hash, train_cfg, state, iteration) -> Checkpoint:
    return Checkpoint(
        config=model_cfg,
        params=params,
        tokenizer_hash=tokenizer_hash,
        meta={
            "iteration": iteration,
            "adam_step": state.step,
            "train_config": train_cfg.to_dict(),
        },
        opt_state=state.to_flat(),
    )


def _save(path, params, model_cfg, tokenizer_hash, train_cfg, state, iteration) -> None:
    save_checkpoint(path, _build_checkpoint(params, model_cfg, tokenizer_hash, train_cfg, state, iteration))
