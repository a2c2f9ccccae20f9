"""Self-attention loss prediction head sharing the segmenter's encoder.

Scaled dot-product attention over the BiLSTM states (queries, keys and
values all projected from the same sequence) is mean-pooled and mapped
through an affine layer with softplus to a non-negative per-sentence loss
estimate. The head is trained to regress the segmenter's per-sentence NLL,
which enters the objective as a constant target (no gradient flows through
it), and its squared-error loss joins the segmentation loss with weight
``lam``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .segmenter import xavier_uniform

ATTENTION_DIM = 64
SCORE_MASK = -1e9


@dataclass
class AttentionParams:
    """Projections [2H, d_k] for query/key/value plus the scalar readout."""

    q: Tensor
    k: Tensor
    v: Tensor
    out_w: Tensor
    out_b: Tensor

    @property
    def d_k(self) -> int:
        return self.q.data.shape[1]

    @classmethod
    def init(cls, rng: np.random.Generator, d_in: int, d_k: int = ATTENTION_DIM) -> "AttentionParams":
        return cls(
            q=Tensor(xavier_uniform(rng, d_in, d_k), True),
            k=Tensor(xavier_uniform(rng, d_in, d_k), True),
            v=Tensor(xavier_uniform(rng, d_in, d_k), True),
            out_w=Tensor(xavier_uniform(rng, d_k, 1, shape=(d_k,)), True),
            out_b=Tensor(np.zeros(1), True),
        )


def self_attention(h: Tensor, params: AttentionParams, mask: np.ndarray | None = None) -> Tensor:
    """Scaled dot-product self-attention over a state sequence.

    h: [B, L, 2H]; scores between positions are q_t . k_i / sqrt(d_k),
    softmax-normalized over i; output row t is the weighted sum of values.
    Padded key positions (mask 0) are excluded from the softmax.
    """
    q = ad.matmul(h, params.q)
    k = ad.matmul(h, params.k)
    v = ad.matmul(h, params.v)
    scores = ad.mul(ad.matmul(q, ad.transpose_last2(k)), 1.0 / np.sqrt(params.d_k))
    if mask is not None:
        keep = np.broadcast_to(
            np.asarray(mask, dtype=bool)[:, None, :], scores.data.shape
        )
        scores = ad.masked_fill(scores, keep, SCORE_MASK)
    return ad.matmul(ad.softmax(scores), v)


def predict_loss(
    h: Tensor,
    params: AttentionParams,
    mask: np.ndarray,
    lengths: np.ndarray,
) -> Tensor:
    """Non-negative predicted loss per sentence [B]: attention output is
    mean-pooled over real positions, mapped affinely and passed through
    softplus."""
    attended = self_attention(h, params, mask)
    masked = ad.mul(attended, np.asarray(mask, dtype=np.float64)[:, :, None])
    pooled = ad.mul(
        ad.reduce_sum(masked, axis=1),
        (1.0 / np.asarray(lengths, dtype=np.float64))[:, None],
    )
    return ad.softplus(ad.add(ad.matmul(pooled, params.out_w), params.out_b))


def loss_head_loss(predicted: Tensor, targets: np.ndarray) -> Tensor:
    """Mean squared error between predicted losses and constant targets."""
    targets = np.asarray(targets, dtype=np.float64)
    if targets.size == 0:
        raise ValueError("empty batch for loss-head regression")
    return ad.reduce_mean(ad.squared_error(predicted, targets))


def joint_loss(seg_nll_batch: Tensor, head_loss: Tensor | None, lam: float) -> Tensor:
    """Mean segmentation NLL plus lam * head regression loss."""
    if lam < 0:
        raise ValueError(f"lambda must be non-negative, got {lam}")
    seg = ad.reduce_mean(seg_nll_batch)
    if head_loss is None or lam == 0.0:
        return seg
    return ad.add(seg, ad.mul(head_loss, lam))
