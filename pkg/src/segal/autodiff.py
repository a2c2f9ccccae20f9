"""Reverse-mode automatic differentiation over dense numpy arrays.

Each primitive records its inputs and a backward rule on the implicit tape
(the operation DAG); calling ``backward()`` on a scalar output replays the
tape in reverse topological order and accumulates ``grad`` arrays on every
tensor that requires them. Arrays are float64 throughout.

The sequence-level hot paths (LSTM unrolling, CRF dynamic programming) are
single fused primitives backed by ``segal.kernels``.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np

from . import kernels

_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Disable tape recording inside the block (inference mode)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class Tensor:
    """A dense array node; ``grad`` is populated by ``backward()``."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_bward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._bward: Callable[[np.ndarray], None] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        """Populate gradients of every tape input w.r.t. this scalar."""
        if self.data.size != 1:
            raise ValueError(f"backward() needs a scalar output, got {self.shape}")
        order = _topo_order(self)
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._bward is not None and node.grad is not None:
                node._bward(node.grad)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __sub__(self, other):
        return add(self, mul(other, -1.0) if isinstance(other, Tensor) else -other)

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _topo_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen = {id(root)}
    stack: list[tuple[Tensor, Iterable[Tensor]]] = [(root, iter(root._parents))]
    while stack:
        node, parents = stack[-1]
        for p in parents:
            if p.requires_grad and id(p) not in seen:
                seen.add(id(p))
                stack.append((p, iter(p._parents)))
                break
        else:
            order.append(node)
            stack.pop()
    return order


def _acc(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _node(data: np.ndarray, parents: Sequence[Tensor], bward) -> Tensor:
    req = _GRAD_ENABLED and any(p.requires_grad for p in parents)
    out = Tensor(data, requires_grad=req)
    if req:
        out._parents = tuple(parents)
        out._bward = bward
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Reduce a broadcasted gradient back to ``shape``."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g.reshape(shape)


# ---------------------------------------------------------------------------
# elementwise and linear-algebra primitives
# ---------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data + b.data

    def bward(g):
        _acc(a, _unbroadcast(g, a.data.shape))
        _acc(b, _unbroadcast(g, b.data.shape))

    return _node(out, (a, b), bward)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data * b.data

    def bward(g):
        _acc(a, _unbroadcast(g * b.data, a.data.shape))
        _acc(b, _unbroadcast(g * a.data, b.data.shape))

    return _node(out, (a, b), bward)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """np.matmul semantics, including batched stacks of matrices."""
    a, b = as_tensor(a), as_tensor(b)
    out = a.data @ b.data

    def bward(g):
        if b.data.ndim == 1:
            _acc(b, _unbroadcast(np.swapaxes(a.data, -1, -2) @ g if a.data.ndim > 1
                                 else a.data * g, b.data.shape))
            _acc(a, _unbroadcast(np.multiply.outer(g, b.data) if a.data.ndim > 1
                                 else g * b.data, a.data.shape))
            return
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        _acc(a, _unbroadcast(ga, a.data.shape))
        _acc(b, _unbroadcast(gb, b.data.shape))

    return _node(out, (a, b), bward)


def sigmoid(x: Tensor) -> Tensor:
    x = as_tensor(x)
    s = 1.0 / (1.0 + np.exp(-x.data))

    def bward(g):
        _acc(x, g * s * (1.0 - s))

    return _node(s, (x,), bward)


def tanh(x: Tensor) -> Tensor:
    x = as_tensor(x)
    t = np.tanh(x.data)

    def bward(g):
        _acc(x, g * (1.0 - t * t))

    return _node(t, (x,), bward)


def softplus(x: Tensor) -> Tensor:
    x = as_tensor(x)
    out = np.logaddexp(0.0, x.data)

    def bward(g):
        _acc(x, g / (1.0 + np.exp(-x.data)))

    return _node(out, (x,), bward)


def exp(x: Tensor) -> Tensor:
    x = as_tensor(x)
    e = np.exp(x.data)

    def bward(g):
        _acc(x, g * e)

    return _node(e, (x,), bward)


def log(x: Tensor) -> Tensor:
    x = as_tensor(x)
    out = np.log(x.data)

    def bward(g):
        _acc(x, g / x.data)

    return _node(out, (x,), bward)


def softmax(x: Tensor) -> Tensor:
    """Softmax over the last axis."""
    x = as_tensor(x)
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=-1, keepdims=True)

    def bward(g):
        _acc(x, (g - (g * s).sum(axis=-1, keepdims=True)) * s)

    return _node(s, (x,), bward)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]

    def bward(g):
        offset = 0
        for t, n in zip(tensors, sizes):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(offset, offset + n)
            _acc(t, g[tuple(idx)])
            offset += n

    return _node(out, tensors, bward)


def dropout(x: Tensor, rate: float, train: bool, rng: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout: kept units scale by 1/(1-rate) at train time, so
    inference applies no correction. Identity when not training or rate 0."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if not train or rate == 0.0:
        return x
    if rng is None:
        raise ValueError("training-mode dropout needs an rng")
    keep = (rng.random(x.data.shape) >= rate) / (1.0 - rate)
    out = x.data * keep

    def bward(g):
        _acc(x, g * keep)

    return _node(out, (x,), bward)


def reduce_sum(x: Tensor, axis: int | None = None) -> Tensor:
    x = as_tensor(x)
    out = x.data.sum(axis=axis)

    def bward(g):
        if axis is None:
            _acc(x, np.broadcast_to(g, x.data.shape).copy())
        else:
            _acc(x, np.broadcast_to(np.expand_dims(g, axis), x.data.shape).copy())

    return _node(out, (x,), bward)


def reduce_mean(x: Tensor, axis: int | None = None) -> Tensor:
    x = as_tensor(x)
    n = x.data.size if axis is None else x.data.shape[axis]
    return mul(reduce_sum(x, axis), 1.0 / n)


def squared_error(pred: Tensor, target) -> Tensor:
    """Elementwise (pred - target)^2; target may be a constant array."""
    diff = add(pred, mul(as_tensor(target), -1.0))
    return mul(diff, diff)


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    x = as_tensor(x)
    out = x.data.reshape(shape)

    def bward(g):
        _acc(x, g.reshape(x.data.shape))

    return _node(out, (x,), bward)


def transpose_last2(x: Tensor) -> Tensor:
    x = as_tensor(x)
    out = np.swapaxes(x.data, -1, -2)

    def bward(g):
        _acc(x, np.swapaxes(g, -1, -2))

    return _node(out, (x,), bward)


def flip(x: Tensor, axis: int) -> Tensor:
    x = as_tensor(x)
    out = np.flip(x.data, axis=axis).copy()

    def bward(g):
        _acc(x, np.flip(g, axis=axis))

    return _node(out, (x,), bward)


def gather_rows(table: Tensor, ids: np.ndarray) -> Tensor:
    """Embedding lookup: rows of ``table`` at integer ``ids`` (any shape)."""
    table = as_tensor(table)
    ids = np.asarray(ids, dtype=np.int64)
    out = table.data[ids]

    def bward(g):
        if not table.requires_grad:
            return
        if table.grad is None:
            table.grad = np.zeros_like(table.data)
        np.add.at(table.grad, ids.reshape(-1), g.reshape(-1, table.data.shape[1]))

    return _node(out, (table,), bward)


def masked_fill(x: Tensor, keep: np.ndarray, fill_value: float) -> Tensor:
    """Replace entries where ``keep`` is False by ``fill_value`` (constant);
    gradients flow only through kept entries."""
    x = as_tensor(x)
    keep = np.asarray(keep, dtype=bool)
    out = np.where(keep, x.data, fill_value)

    def bward(g):
        _acc(x, np.where(keep, g, 0.0))

    return _node(out, (x,), bward)


# ---------------------------------------------------------------------------
# fused sequence primitives (kernel-backed)
# ---------------------------------------------------------------------------

def lstm_sequence(x: Tensor, mask: np.ndarray, W: Tensor, U: Tensor, b: Tensor) -> Tensor:
    """One LSTM direction over a padded batch.

    x: [B, L, D]; mask: [B, L] floats (1 = real position); returns
    [B, L, H] hidden states, zero at masked positions.
    """
    X = np.ascontiguousarray(np.swapaxes(x.data, 0, 1))
    M = np.ascontiguousarray(np.asarray(mask, dtype=np.float64).T)
    Hout, F, I, O, G, C = kernels.lstm_forward(X, M, W.data, U.data, b.data)
    out = np.ascontiguousarray(np.swapaxes(Hout, 0, 1))

    def bward(g):
        dH = np.ascontiguousarray(np.swapaxes(g, 0, 1))
        W_T = np.ascontiguousarray(W.data.T)
        U_T = np.ascontiguousarray(U.data.T)
        dX, dW, dU, db = kernels.lstm_backward(
            dH, X, M, W_T, U.data, U_T, F, I, O, G, C, Hout
        )
        _acc(x, np.swapaxes(dX, 0, 1))
        _acc(W, dW)
        _acc(U, dU)
        _acc(b, db)

    return _node(out, (x, W, U, b), bward)


def crf_sentence_nll(
    emissions: Tensor, transitions: Tensor, tags: np.ndarray, lengths: np.ndarray
) -> Tensor:
    """Per-sentence CRF negative log-likelihood vector.

    emissions: [B, Lmax, N]; transitions: [N+2, N+2] effective matrix
    (illegal entries already filled); tags/lengths are constant int arrays.
    """
    tags = np.ascontiguousarray(tags, dtype=np.int64)
    lengths = np.ascontiguousarray(lengths, dtype=np.int64)
    nll, demis, dtrans = kernels.crf_nll_grad(
        np.ascontiguousarray(emissions.data), transitions.data, tags, lengths
    )

    def bward(g):
        _acc(emissions, demis * g[:, None, None])
        _acc(transitions, np.tensordot(g, dtrans, axes=1))

    return _node(nll, (emissions, transitions), bward)


# ---------------------------------------------------------------------------
# gradient checking
# ---------------------------------------------------------------------------

def grad_check(
    f: Callable[[dict[str, Tensor]], Tensor],
    params: dict[str, np.ndarray],
    h: float = 1e-5,
    tol: float = 1e-4,
) -> tuple[bool, float, str]:
    """Compare analytic gradients of the scalar ``f(params)`` with central
    finite differences entry by entry.

    Returns (passed, max relative error, name of the worst parameter).
    Relative error uses max(|analytic|, |numeric|, 1e-2) as denominator so
    near-zero entries do not spuriously dominate.
    """
    tensors = {k: Tensor(v.copy(), requires_grad=True) for k, v in params.items()}
    out = f(tensors)
    out.backward()
    analytic = {
        k: (t.grad.copy() if t.grad is not None else np.zeros_like(t.data))
        for k, t in tensors.items()
    }

    def eval_at(values: dict[str, np.ndarray]) -> float:
        with no_grad():
            return f({k: Tensor(v) for k, v in values.items()}).item()

    worst = 0.0
    worst_name = ""
    values = {k: v.copy() for k, v in params.items()}
    for name, arr in values.items():
        flat = arr.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = eval_at(values)
            flat[i] = orig - h
            down = eval_at(values)
            flat[i] = orig
            numeric = (up - down) / (2.0 * h)
            ga = analytic[name].reshape(-1)[i]
            rel = abs(ga - numeric) / max(abs(ga), abs(numeric), 1e-2)
            if rel > worst:
                worst = rel
                worst_name = f"{name}[{i}]"
    return worst < tol, worst, worst_name
