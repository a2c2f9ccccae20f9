"""Backend dispatch for the hot kernels.

The environment variable ``SEGAL_BACKEND`` selects the implementation:
``numba`` (default when numba imports) JIT-compiles the kernels in
``segal.kernels._impl``; ``numpy`` runs the same source uncompiled. Both
paths are numerically identical; ``benchmarks/bench_kernels.py`` measures
the gap.
"""

from __future__ import annotations

import logging
import os
from types import SimpleNamespace

from . import _impl

logger = logging.getLogger(__name__)

KERNEL_NAMES = (
    "lstm_forward",
    "lstm_backward",
    "crf_nll_grad",
    "crf_marginals",
    "crf_viterbi",
    "crf_logz",
    "sgns_epoch",
)

ENV_VAR = "SEGAL_BACKEND"


def make_backend(kind: str) -> SimpleNamespace:
    """Build a namespace of kernel functions for ``kind`` (numba|numpy)."""
    if kind == "numpy":
        return SimpleNamespace(
            name="numpy", **{n: getattr(_impl, n) for n in KERNEL_NAMES}
        )
    if kind == "numba":
        from numba import njit

        wrapped = {
            n: njit(cache=True)(getattr(_impl, n)) for n in KERNEL_NAMES
        }
        return SimpleNamespace(name="numba", **wrapped)
    raise ValueError(f"unknown kernel backend {kind!r}")


def _default_kind() -> str:
    kind = os.environ.get(ENV_VAR, "").strip().lower()
    if kind in ("numba", "numpy"):
        return kind
    if kind:
        raise ValueError(f"{ENV_VAR} must be 'numba' or 'numpy', got {kind!r}")
    try:
        import numba  # noqa: F401
    except ImportError:
        logger.warning("numba unavailable, falling back to numpy kernels")
        return "numpy"
    return "numba"


backend = make_backend(_default_kind())

lstm_forward = backend.lstm_forward
lstm_backward = backend.lstm_backward
crf_nll_grad = backend.crf_nll_grad
crf_marginals = backend.crf_marginals
crf_viterbi = backend.crf_viterbi
crf_logz = backend.crf_logz
sgns_epoch = backend.sgns_epoch

BACKEND_NAME = backend.name
