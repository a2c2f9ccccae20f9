"""Adam optimizer over named parameter tensors, plus checkpoint I/O."""

from __future__ import annotations

import json

import numpy as np

from .autodiff import Tensor

CHECKPOINT_VERSION = 1


class NonFiniteGradientError(RuntimeError):
    """A gradient contained NaN or infinity; carries the parameter name."""


def adam_step(
    value: np.ndarray,
    grad: np.ndarray,
    m: np.ndarray,
    v: np.ndarray,
    t: int,
    lr: float = 1e-3,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> None:
    """One in-place Adam update with bias correction; ``t`` is 1-based."""
    m *= beta1
    m += (1.0 - beta1) * grad
    v *= beta2
    v += (1.0 - beta2) * grad * grad
    mhat = m / (1.0 - beta1**t)
    vhat = v / (1.0 - beta2**t)
    value -= lr * mhat / (np.sqrt(vhat) + eps)


def clip_global_norm(params: dict[str, Tensor], max_norm: float) -> float:
    """Scale all gradients so their joint L2 norm is at most ``max_norm``.
    Returns the pre-clip norm."""
    total = 0.0
    for p in params.values():
        if p.grad is not None:
            total += float((p.grad * p.grad).sum())
    norm = float(np.sqrt(total))
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / (norm + 1e-12)
        for p in params.values():
            if p.grad is not None:
                p.grad *= scale
    return norm


class Adam:
    """Adam over a dict of named parameter tensors.

    ``frozen`` names are skipped entirely; ``zero_rows`` maps a parameter
    name to a row index whose gradient is dropped before every step (used to
    pin padding embeddings at zero).
    """

    def __init__(
        self,
        params: dict[str, Tensor],
        lr: float = 1e-3,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
        clip_norm: float = 5.0,
        frozen: set[str] | None = None,
        zero_rows: dict[str, int] | None = None,
    ):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.clip_norm = clip_norm
        self.frozen = frozen or set()
        self.zero_rows = zero_rows or {}
        self.t = 0
        self._m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self._v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def step(self) -> float:
        """Apply one update from the accumulated gradients; returns the
        pre-clip gradient norm."""
        for name, p in self.params.items():
            if p.grad is not None and not np.isfinite(p.grad).all():
                raise NonFiniteGradientError(
                    f"non-finite gradient in {name!r}: "
                    f"|grad|_max={np.abs(p.grad[np.isfinite(p.grad)]).max(initial=0.0):.3e}, "
                    f"nan={int(np.isnan(p.grad).sum())}, inf={int(np.isinf(p.grad).sum())}"
                )
        for name, row in self.zero_rows.items():
            p = self.params.get(name)
            if p is not None and p.grad is not None:
                p.grad[row] = 0.0
        norm = clip_global_norm(
            {k: p for k, p in self.params.items() if k not in self.frozen},
            self.clip_norm,
        )
        self.t += 1
        for name, p in self.params.items():
            if name in self.frozen or p.grad is None:
                continue
            adam_step(
                p.data, p.grad, self._m[name], self._v[name], self.t,
                self.lr, self.beta1, self.beta2, self.eps,
            )
        return norm


def save_checkpoint(path: str, params: dict[str, Tensor], meta: dict | None = None) -> None:
    """Write named parameter arrays in deterministic (sorted) order."""
    arrays = {k: params[k].data for k in sorted(params)}
    header = json.dumps(
        {"version": CHECKPOINT_VERSION, "names": sorted(params), "meta": meta or {}},
        sort_keys=True,
    )
    np.savez(path, __header__=np.frombuffer(header.encode("utf-8"), dtype=np.uint8), **arrays)


def load_checkpoint(path: str) -> tuple[dict[str, np.ndarray], dict]:
    """Read a checkpoint; returns (name -> array, meta)."""
    with np.load(path) as z:
        header = json.loads(bytes(z["__header__"]).decode("utf-8"))
        if header.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {header.get('version')}")
        arrays = {name: z[name].copy() for name in header["names"]}
    return arrays, header.get("meta", {})
