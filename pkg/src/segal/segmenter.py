"""BiLSTM encoder with a linear-chain CRF output layer.

The encoder runs one LSTM per direction over the embedded characters and
concatenates the two hidden sequences. The CRF scores tag paths as emission
plus transition sums over an augmented state space {B, M, E, S, START, STOP};
transitions that violate the BMES grammar are pinned to a large negative
mask value so decoded paths are always grammatical. All dynamic programming
runs in log space (see segal.kernels).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import kernels
from .autodiff import Tensor
from .corpus import TAGS

N_TAGS = len(TAGS)  # B=0, M=1, E=2, S=3
START = N_TAGS
STOP = N_TAGS + 1

TRANSITION_MASK_VALUE = -np.inf


def legal_transition_mask() -> np.ndarray:
    """Boolean [6, 6] matrix of BMES-grammatical transitions."""
    legal = np.zeros((N_TAGS + 2, N_TAGS + 2), dtype=bool)
    allowed = {"B": "ME", "M": "ME", "E": "BS", "S": "BS"}
    for a, succs in allowed.items():
        for b in succs:
            legal[TAGS.index(a), TAGS.index(b)] = True
    for b in "BS":  # sentence may start with B or S
        legal[START, TAGS.index(b)] = True
    for a in "ES":  # and must end with E or S
        legal[TAGS.index(a), STOP] = True
    return legal

LEGAL_TRANSITIONS = legal_transition_mask()


def xavier_uniform(rng: np.random.Generator, fan_in: int, fan_out: int, shape=None) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape or (fan_in, fan_out))


@dataclass
class LSTMDirParams:
    """One direction's parameters with gates packed (forget, input, output,
    candidate) along the last axis: W [D, 4H], U [H, 4H], b [4H]."""

    W: Tensor
    U: Tensor
    b: Tensor

    @property
    def hidden(self) -> int:
        return self.U.data.shape[0]

    @classmethod
    def init(cls, rng: np.random.Generator, d_in: int, d_h: int) -> "LSTMDirParams":
        W = np.concatenate(
            [xavier_uniform(rng, d_in, d_h) for _ in range(4)], axis=1
        )
        U = np.concatenate(
            [xavier_uniform(rng, d_h, d_h) for _ in range(4)], axis=1
        )
        b = np.zeros(4 * d_h)
        b[:d_h] = 1.0  # forget-gate bias offset stabilizes early training
        return cls(Tensor(W, True), Tensor(U, True), Tensor(b, True))

    def gate(self, name: str, of: str = "W") -> np.ndarray:
        """Per-gate view for inspection: name in f/i/o/c, of in W/U/b."""
        idx = "fioc".index(name)
        h = self.hidden
        arr = {"W": self.W, "U": self.U, "b": self.b}[of].data
        return arr[..., idx * h : (idx + 1) * h]


def lstm_step(
    x_t: np.ndarray, h_prev: np.ndarray, c_prev: np.ndarray, params: LSTMDirParams
) -> tuple[np.ndarray, np.ndarray]:
    """Single LSTM cell update (plain numpy, for inspection and tests):
    sigmoid gates, candidate tanh, c_t = c_prev*f + i*g, h_t = tanh(c_t)*o."""
    h = params.hidden
    z = x_t @ params.W.data + h_prev @ params.U.data + params.b.data
    f = 1.0 / (1.0 + np.exp(-z[..., :h]))
    i = 1.0 / (1.0 + np.exp(-z[..., h : 2 * h]))
    o = 1.0 / (1.0 + np.exp(-z[..., 2 * h : 3 * h]))
    g = np.tanh(z[..., 3 * h :])
    c_t = c_prev * f + i * g
    h_t = np.tanh(c_t) * o
    return h_t, c_t


@dataclass
class BiLSTMParams:
    fwd: LSTMDirParams
    bwd: LSTMDirParams

    @classmethod
    def init(cls, rng_f, rng_b, d_in: int, d_h_per_dir: int) -> "BiLSTMParams":
        return cls(
            LSTMDirParams.init(rng_f, d_in, d_h_per_dir),
            LSTMDirParams.init(rng_b, d_in, d_h_per_dir),
        )


def encode(
    x: Tensor,
    mask: np.ndarray,
    params: BiLSTMParams,
    dropout_rate: float = 0.0,
    train: bool = False,
    rng: np.random.Generator | None = None,
) -> Tensor:
    """BiLSTM context vectors: row t is [forward h_t ; backward h_t].

    x: [B, L, D] embedded input, mask: [B, L]. Dropout applies to the
    concatenated output in training mode only.
    """
    h_fwd = ad.lstm_sequence(x, mask, params.fwd.W, params.fwd.U, params.fwd.b)
    x_rev = ad.flip(x, axis=1)
    mask_rev = mask[:, ::-1]
    h_bwd = ad.flip(
        ad.lstm_sequence(x_rev, mask_rev, params.bwd.W, params.bwd.U, params.bwd.b),
        axis=1,
    )
    h = ad.concat([h_fwd, h_bwd], axis=-1)
    return ad.dropout(h, dropout_rate, train, rng)


@dataclass
class CRFParams:
    """Emission projection [2H, N] + bias, and raw transition scores [6, 6].

    ``effective_transitions`` overlays the grammar mask; only legal entries
    are learned (illegal ones receive zero gradient through the mask)."""

    W: Tensor
    b: Tensor
    trans: Tensor
    mask_value: float = TRANSITION_MASK_VALUE

    @classmethod
    def init(cls, rng: np.random.Generator, d_in: int,
             mask_value: float = TRANSITION_MASK_VALUE) -> "CRFParams":
        return cls(
            W=Tensor(xavier_uniform(rng, d_in, N_TAGS), True),
            b=Tensor(np.zeros(N_TAGS), True),
            trans=Tensor(np.zeros((N_TAGS + 2, N_TAGS + 2)), True),
            mask_value=mask_value,
        )

    def effective_transitions(self) -> Tensor:
        return ad.masked_fill(self.trans, LEGAL_TRANSITIONS, self.mask_value)

    def effective_transitions_np(self) -> np.ndarray:
        return np.where(LEGAL_TRANSITIONS, self.trans.data, self.mask_value)


def emissions(h: Tensor, crf: CRFParams) -> Tensor:
    """Per-token tag scores [B, L, N] from encoder states."""
    return ad.add(ad.matmul(h, crf.W), crf.b)


def crf_nll(h: Tensor, tags: np.ndarray, lengths: np.ndarray, crf: CRFParams) -> Tensor:
    """Per-sentence negative log-likelihood vector [B] of the gold paths."""
    return ad.crf_sentence_nll(
        emissions(h, crf), crf.effective_transitions(), tags, lengths
    )


@dataclass
class SegOutput:
    """Inference results for one sentence."""

    viterbi_tags: str
    viterbi_logprob: float
    marginals: np.ndarray | None = None  # [Len, N]
    nll: float | None = None
    predicted_loss: float | None = None


def viterbi_decode(emis: np.ndarray, trans: np.ndarray) -> tuple[str, float]:
    """Best legal tag path for one sentence's emissions [Len, N]; ties break
    toward the lowest tag index. Returns (tag string, log posterior)."""
    L = emis.shape[0]
    paths, logprob = kernels.crf_viterbi(
        np.ascontiguousarray(emis[None, :, :]), trans, np.array([L], dtype=np.int64)
    )
    return "".join(TAGS[i] for i in paths[0, :L]), float(logprob[0])


def token_marginals(emis: np.ndarray, trans: np.ndarray) -> np.ndarray:
    """Posterior P(y_t = k | x) per token, [Len, N]."""
    L = emis.shape[0]
    marg, _, _ = kernels.crf_marginals(
        np.ascontiguousarray(emis[None, :, :]), trans, np.array([L], dtype=np.int64)
    )
    return marg[0, :L]


def sentence_nll(emis: np.ndarray, trans: np.ndarray, tags: str) -> float:
    """Gold-path NLL for one sentence from plain numpy emissions."""
    L = emis.shape[0]
    tag_ids = np.array([[TAGS.index(t) for t in tags]], dtype=np.int64)
    nll, _, _ = kernels.crf_nll_grad(
        np.ascontiguousarray(emis[None, :, :]), trans, tag_ids,
        np.array([L], dtype=np.int64),
    )
    return float(nll[0])
