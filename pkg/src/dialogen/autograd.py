"""Dense tensors with reverse-mode differentiation on numpy storage.

Tensors are immutable once they enter a graph; each op records its inputs and a
vector-Jacobian closure, and backward() walks the recorded graph once in
reverse topological order. Storage is contiguous row-major float32 or
float64; broadcasting is limited to the documented bias case. The engine is
deliberately small so every gradient is auditable against finite differences.
"""

from __future__ import annotations

import math
from contextlib import contextmanager
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

DTYPES = {"f32": np.float32, "f64": np.float64}


class ShapeError(ValueError):
    pass


class GraphError(RuntimeError):
    pass


_grad_enabled = True


@contextmanager
def no_grad():
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_consumed", "name")

    def __init__(self, data, dtype: Optional[str] = None, requires_grad: bool = False,
                 name: str = ""):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(DTYPES[dtype])
        elif arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float64)
        self.data = np.ascontiguousarray(arr)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self._parents: tuple = ()
        self._consumed = False
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self) -> str:
        return "f32" if self.data.dtype == np.float32 else "f64"

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def __repr__(self) -> str:
        tag = f" {self.name!r}" if self.name else ""
        return f"Tensor{tag}(shape={self.shape}, dtype={self.dtype})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, other)


def parameter(data, dtype: str = "f32", name: str = "") -> Tensor:
    return Tensor(data, dtype=dtype, requires_grad=True, name=name)


def _tracked(*tensors: Tensor) -> bool:
    return _grad_enabled and any(t.requires_grad or t._parents for t in tensors)


def _make(data: np.ndarray, parents: Iterable[tuple[Tensor, Callable]]) -> Tensor:
    out = Tensor(data)
    parents = tuple(parents)
    if parents and _grad_enabled:
        out._parents = parents
        out.requires_grad = True
    return out


def _same_dtype(*tensors: Tensor) -> np.dtype:
    dtypes = {t.data.dtype for t in tensors}
    if len(dtypes) != 1:
        raise ShapeError(f"mixed dtypes {sorted(str(d) for d in dtypes)}")
    return dtypes.pop()


# ---------------------------------------------------------------------------
# elementwise and scalar ops
# ---------------------------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum; a 1-D right operand broadcasts over the last axis."""
    _same_dtype(a, b)
    bias_case = b.data.ndim == 1 and a.data.ndim > 1 and a.shape[-1] == b.shape[0]
    if a.shape != b.shape and not bias_case:
        raise ShapeError(f"add shapes {a.shape} and {b.shape}")
    data = a.data + b.data
    if not _tracked(a, b):
        return Tensor(data)

    def vjp_a(g):
        return g

    def vjp_b(g):
        if bias_case:
            return g.reshape(-1, g.shape[-1]).sum(axis=0)
        return g

    return _make(data, [(a, vjp_a), (b, vjp_b)])


def sub(a: Tensor, b: Tensor) -> Tensor:
    return add(a, scale(b, -1.0))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_dtype(a, b)
    if a.shape != b.shape:
        raise ShapeError(f"mul shapes {a.shape} and {b.shape}")
    data = a.data * b.data
    if not _tracked(a, b):
        return Tensor(data)
    return _make(data, [(a, lambda g: g * b.data), (b, lambda g: g * a.data)])


def scale(a: Tensor, s: float) -> Tensor:
    data = a.data * a.data.dtype.type(s)
    if not _tracked(a):
        return Tensor(data)
    return _make(data, [(a, lambda g: g * s)])


def add_const(a: Tensor, c: float) -> Tensor:
    data = a.data + a.data.dtype.type(c)
    if not _tracked(a):
        return Tensor(data)
    return _make(data, [(a, lambda g: g)])


def exp(a: Tensor) -> Tensor:
    data = np.exp(a.data)
    if not _tracked(a):
        return Tensor(data)
    return _make(data, [(a, lambda g: g * data)])


def tanh(a: Tensor) -> Tensor:
    data = np.tanh(a.data)
    if not _tracked(a):
        return Tensor(data)
    return _make(data, [(a, lambda g: g * (1.0 - data * data))])


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(a: Tensor) -> Tensor:
    """Gaussian error linear unit, tanh approximation."""
    x = a.data
    inner = _GELU_C * (x + 0.044715 * x**3)
    t = np.tanh(inner)
    data = 0.5 * x * (1.0 + t)
    if not _tracked(a):
        return Tensor(data.astype(x.dtype, copy=False))

    def vjp(g):
        sech2 = 1.0 - t * t
        deriv = 0.5 * (1.0 + t) + 0.5 * x * sech2 * _GELU_C * (1.0 + 3 * 0.044715 * x**2)
        return g * deriv.astype(x.dtype, copy=False)

    return _make(data.astype(x.dtype, copy=False), [(a, vjp)])


def sum_all(a: Tensor) -> Tensor:
    data = a.data.sum(dtype=a.data.dtype)
    if not _tracked(a):
        return Tensor(data)
    return _make(np.asarray(data), [(a, lambda g: np.broadcast_to(g, a.shape).astype(a.data.dtype))])


def mean_all(a: Tensor) -> Tensor:
    return scale(sum_all(a), 1.0 / a.data.size)


# ---------------------------------------------------------------------------
# shape ops
# ---------------------------------------------------------------------------


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    data = a.data.reshape(shape)
    if not _tracked(a):
        return Tensor(data)
    return _make(data, [(a, lambda g: g.reshape(a.shape))])


def transpose(a: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    data = np.ascontiguousarray(np.transpose(a.data, axes))
    if not _tracked(a):
        return Tensor(data)
    inverse = tuple(np.argsort(axes))
    return _make(data, [(a, lambda g: np.transpose(g, inverse))])


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    _same_dtype(*tensors)
    data = np.concatenate([t.data for t in tensors], axis=axis)
    if not _tracked(*tensors):
        return Tensor(data)
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def make_vjp(i):
        def vjp(g):
            index = [slice(None)] * g.ndim
            index[axis] = slice(offsets[i], offsets[i + 1])
            return g[tuple(index)]

        return vjp

    return _make(data, [(t, make_vjp(i)) for i, t in enumerate(tensors)])


def slice_axis(a: Tensor, axis: int, start: int, stop: int) -> Tensor:
    index = [slice(None)] * a.data.ndim
    index[axis] = slice(start, stop)
    data = np.ascontiguousarray(a.data[tuple(index)])
    if not _tracked(a):
        return Tensor(data)

    def vjp(g):
        full = np.zeros(a.shape, dtype=a.data.dtype)
        full[tuple(index)] = g
        return full

    return _make(data, [(a, vjp)])


# ---------------------------------------------------------------------------
# linear algebra and normalization
# ---------------------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product [m,k]x[k,n]; 3-D inputs multiply as equal-size stacks."""
    _same_dtype(a, b)
    if a.data.ndim == b.data.ndim == 2:
        if a.shape[1] != b.shape[0]:
            raise ShapeError(f"matmul shapes {a.shape} and {b.shape}")
    elif a.data.ndim == b.data.ndim == 3:
        if a.shape[0] != b.shape[0] or a.shape[2] != b.shape[1]:
            raise ShapeError(f"batched matmul shapes {a.shape} and {b.shape}")
    else:
        raise ShapeError(f"matmul needs matching 2-D or 3-D inputs, got {a.shape} and {b.shape}")
    data = np.matmul(a.data, b.data)
    if not _tracked(a, b):
        return Tensor(data)

    def vjp_a(g):
        return np.matmul(g, np.swapaxes(b.data, -1, -2))

    def vjp_b(g):
        return np.matmul(np.swapaxes(a.data, -1, -2), g)

    return _make(data, [(a, vjp_a), (b, vjp_b)])


def softmax(x: Tensor, axis: int = -1, mask: Optional[np.ndarray] = None) -> Tensor:
    """Normalized exponentials along an axis, max-subtracted for stability.

    mask is a boolean array (True = position participates); masked positions
    get probability zero, matching an additive minus-infinity pre-softmax.
    Rows with nothing visible come out all zero.
    """
    data = _softmax_raw(x.data, axis, mask)
    if not _tracked(x):
        return Tensor(data)

    def vjp(g):
        inner = (g * data).sum(axis=axis, keepdims=True)
        return data * (g - inner)

    return _make(data, [(x, vjp)])


def _softmax_raw(x: np.ndarray, axis: int, mask: Optional[np.ndarray]) -> np.ndarray:
    if mask is not None:
        mask = np.broadcast_to(mask, x.shape)
        neg = np.finfo(x.dtype).min
        shifted = np.where(mask, x, neg)
    else:
        shifted = x
    shifted = shifted - shifted.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    if mask is not None:
        e = np.where(mask, e, 0.0)
    denom = e.sum(axis=axis, keepdims=True)
    return np.where(denom > 0, e / np.where(denom > 0, denom, 1.0), 0.0).astype(x.dtype)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Zero-mean unit-variance normalization of the last axis, then affine."""
    h = x.shape[-1]
    if gain.shape != (h,) or bias.shape != (h,):
        raise ShapeError(f"layer_norm affine shapes {gain.shape}/{bias.shape} vs feature {h}")
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv_sigma = 1.0 / np.sqrt(var + eps)
    normed = centered * inv_sigma
    data = (normed * gain.data + bias.data).astype(x.data.dtype)
    if not _tracked(x, gain, bias):
        return Tensor(data)

    def vjp_x(g):
        gg = g * gain.data
        m1 = gg.mean(axis=-1, keepdims=True)
        m2 = (gg * normed).mean(axis=-1, keepdims=True)
        return ((gg - m1 - normed * m2) * inv_sigma).astype(x.data.dtype)

    def vjp_gain(g):
        return (g * normed).reshape(-1, h).sum(axis=0)

    def vjp_bias(g):
        return g.reshape(-1, h).sum(axis=0)

    return _make(data, [(x, vjp_x), (gain, vjp_gain), (bias, vjp_bias)])


def embedding(table: Tensor, ids: np.ndarray) -> Tensor:
    """Row gather; the gradient scatter-adds back into the table."""
    ids = np.asarray(ids, dtype=np.int64)
    if ids.ndim != 1:
        raise ShapeError("embedding ids must be 1-D")
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise ShapeError("embedding id out of range")
    data = table.data[ids]
    if not _tracked(table):
        return Tensor(data)

    def vjp(g):
        full = np.zeros(table.shape, dtype=table.data.dtype)
        np.add.at(full, ids, g)
        return full

    return _make(data, [(table, vjp)])


def cross_entropy(logits: Tensor, targets: np.ndarray, mask: np.ndarray) -> Tensor:
    """Mean negative log-likelihood over masked positions.

    logits [T,V]; targets and mask are length-T integer arrays. A mask with
    no ones is a contract violation.
    """
    targets = np.asarray(targets, dtype=np.int64)
    mask = np.asarray(mask)
    if logits.data.ndim != 2:
        raise ShapeError("cross_entropy expects [T,V] logits")
    t_len = logits.shape[0]
    if targets.shape != (t_len,) or mask.shape != (t_len,):
        raise ShapeError("targets/mask length must match logits rows")
    n_masked = int(mask.sum())
    if n_masked == 0:
        raise ShapeError("cross_entropy mask selects no positions")

    x = logits.data
    rowmax = x.max(axis=1, keepdims=True)
    shifted = x - rowmax
    lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True)) + rowmax
    logp = x[np.arange(t_len), targets] - lse[:, 0]
    weights = (mask.astype(x.dtype)) / n_masked
    data = np.asarray(-(weights * logp).sum(), dtype=x.dtype)
    if not _tracked(logits):
        return Tensor(data)

    def vjp(g):
        probs = np.exp(x - lse)
        probs[np.arange(t_len), targets] -= 1.0
        return (probs * weights[:, None] * g).astype(x.dtype)

    return _make(data, [(logits, vjp)])


# ---------------------------------------------------------------------------
# backward pass and verification
# ---------------------------------------------------------------------------


def backward(loss: Tensor) -> None:
    """Accumulate gradients of a scalar loss into every reachable leaf.

    Each node is visited exactly once; re-running backward through already
    consumed nodes is an error because intermediate graphs are not retained.
    """
    if loss.data.size != 1:
        raise ShapeError(f"backward needs a scalar, got shape {loss.shape}")
    if loss._consumed:
        raise GraphError("backward called twice on the same graph")

    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent, _ in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))

    for node in order:
        if node._parents and node._consumed:
            raise GraphError("graph node already consumed by a previous backward")

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.requires_grad and not node._parents:
            node.grad = g if node.grad is None else node.grad + g
        for parent, vjp in node._parents:
            pg = vjp(g)
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
        if node._parents:
            node._consumed = True


def zero_grads(params: Iterable[Tensor]) -> None:
    for p in params:
        p.zero_grad()


def assert_finite(t: Tensor | np.ndarray, what: str = "tensor") -> None:
    data = t.data if isinstance(t, Tensor) else t
    if not np.all(np.isfinite(data)):
        raise FloatingPointError(f"non-finite values in {what}")


def grad_check(f: Callable[[Tensor], Tensor], x: Tensor, eps: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    Relative error per coordinate is |analytic - fd| / max(1, |analytic|);
    x must be float64 for the differences to be trustworthy.
    """
    if x.dtype != "f64":
        raise ShapeError("grad_check requires a float64 input")
    probe = parameter(x.data.copy(), dtype="f64")
    out = f(probe)
    backward(out)
    analytic = probe.grad.copy() if probe.grad is not None else np.zeros_like(probe.data)

    flat = probe.data.reshape(-1)
    fd = np.zeros_like(flat)
    for i in range(flat.size):
        original = flat[i]
        flat[i] = original + eps
        hi = float(f(Tensor(probe.data, dtype="f64")).data)
        flat[i] = original - eps
        lo = float(f(Tensor(probe.data, dtype="f64")).data)
        flat[i] = original
        fd[i] = (hi - lo) / (2 * eps)
    a = analytic.reshape(-1)
    rel = np.abs(a - fd) / np.maximum(1.0, np.abs(a))
    return float(rel.max()) if rel.size else 0.0
