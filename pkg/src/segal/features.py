"""Vocabularies, n-gram feature sequences and skip-gram embedding pretraining.

Characters feed the model directly; each position additionally carries an
n-gram token (the current character concatenated with its predecessors),
embedded via a table pretrained with skip-gram negative sampling. Leading
positions pad their n-grams with a sentinel character so every sentence
yields exactly one feature token per character.
"""

from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from . import kernels

logger = logging.getLogger(__name__)

PAD_ID, UNK_ID, BOS_ID = 0, 1, 2
PAD_TOKEN, UNK_TOKEN, BOS_TOKEN = "<PAD>", "<UNK>", "<BOS>"
# sentinel character prepended when an n-gram would start before the sentence
BOS_CHAR = "␂"

NGRAM_ORDERS = (2, 3, 4)

CHAR_DIM = 128
NGRAM_DIM = 128


class ConfigError(ValueError):
    pass


@dataclass
class Vocab:
    """Dense token-id mapping with reserved PAD/UNK/BOS rows."""

    token_to_id: dict[str, int] = field(default_factory=dict)
    min_freq: int = 1

    def __post_init__(self) -> None:
        for tok, i in ((PAD_TOKEN, PAD_ID), (UNK_TOKEN, UNK_ID), (BOS_TOKEN, BOS_ID)):
            self.token_to_id.setdefault(tok, i)

    @classmethod
    def build(cls, tokens: Iterable[str], min_freq: int = 1) -> "Vocab":
        counts = Counter(tokens)
        vocab = cls(min_freq=min_freq)
        # deterministic id order: frequency desc, then token
        for tok, c in sorted(counts.items(), key=lambda kv: (-kv[1], kv[0])):
            if c >= min_freq and tok not in vocab.token_to_id:
                vocab.token_to_id[tok] = len(vocab.token_to_id)
        return vocab

    def id(self, token: str) -> int:
        return self.token_to_id.get(token, UNK_ID)

    def ids(self, tokens: Sequence[str]) -> np.ndarray:
        return np.array([self.id(t) for t in tokens], dtype=np.int64)

    def __len__(self) -> int:
        return len(self.token_to_id)

    def save(self, path: str) -> None:
        by_id = sorted(self.token_to_id.items(), key=lambda kv: kv[1])
        with open(path, "w", encoding="utf-8") as fh:
            for tok, _ in by_id:
                fh.write(tok + "\n")

    @classmethod
    def load(cls, path: str, min_freq: int = 1) -> "Vocab":
        mapping: dict[str, int] = {}
        with open(path, encoding="utf-8") as fh:
            for i, line in enumerate(fh):
                mapping[line.rstrip("\n")] = i
        return cls(token_to_id=mapping, min_freq=min_freq)


def ngram_features(chars: str, order: int) -> list[str]:
    """Length-preserving n-gram tokens: position t covers characters
    t-order+1 .. t, sentinel-padded before the sentence start."""
    if order not in NGRAM_ORDERS:
        raise ConfigError(f"n-gram order must be one of {NGRAM_ORDERS}, got {order}")
    padded = BOS_CHAR * (order - 1) + chars
    return [padded[t : t + order] for t in range(len(chars))]


def build_vocabs(
    texts: Iterable[str], order: int | None, char_min_freq: int = 1, ngram_min_freq: int = 2
) -> tuple[Vocab, Vocab | None]:
    """Character vocabulary plus (optionally) an n-gram vocabulary."""
    texts = list(texts)
    char_vocab = Vocab.build((ch for t in texts for ch in t), min_freq=char_min_freq)
    if order is None:
        return char_vocab, None
    ngram_vocab = Vocab.build(
        (g for t in texts for g in ngram_features(t, order)), min_freq=ngram_min_freq
    )
    return char_vocab, ngram_vocab


def init_embedding_table(
    vocab_size: int, dim: int, rng: np.random.Generator, scale: float = 0.1
) -> np.ndarray:
    """Uniform(-scale, scale) rows with the PAD row pinned to zero."""
    table = rng.uniform(-scale, scale, size=(vocab_size, dim))
    table[PAD_ID] = 0.0
    return table


def skipgram_pairs(sequence: np.ndarray, window: int) -> list[tuple[int, int]]:
    """All (center, context) id pairs within the symmetric window."""
    pairs = []
    n = len(sequence)
    for t in range(n):
        for off in range(1, window + 1):
            if t - off >= 0:
                pairs.append((int(sequence[t]), int(sequence[t - off])))
            if t + off < n:
                pairs.append((int(sequence[t]), int(sequence[t + off])))
    return pairs


def train_skipgram(
    sequences: Sequence[np.ndarray],
    vocab_size: int,
    dim: int = NGRAM_DIM,
    window: int = 2,
    negatives: int = 5,
    epochs: int = 5,
    lr: float = 0.025,
    seed: int = 0,
) -> tuple[np.ndarray, list[float]]:
    """Skip-gram with negative sampling over id sequences.

    Returns (center-vector table [vocab_size, dim], mean loss per epoch).
    The learning rate decays linearly to lr/10 over all epochs; negative
    ids are drawn from the unigram distribution raised to 0.75.
    """
    if vocab_size < 2:
        raise ConfigError(f"vocabulary too small for skip-gram: {vocab_size}")
    if not sequences:
        raise ConfigError("empty corpus for skip-gram pretraining")
    rng = np.random.default_rng(seed)
    pairs = [p for seq in sequences for p in skipgram_pairs(seq, window)]
    if not pairs:
        raise ConfigError("no skip-gram pairs (all sequences of length 1?)")
    centers_all = np.array([p[0] for p in pairs], dtype=np.int64)
    contexts_all = np.array([p[1] for p in pairs], dtype=np.int64)

    freq = np.bincount(
        np.concatenate([np.asarray(s, dtype=np.int64) for s in sequences]),
        minlength=vocab_size,
    ).astype(np.float64)
    freq[PAD_ID] = 0.0
    weights = freq**0.75
    if weights.sum() <= 0:
        raise ConfigError("degenerate token distribution")
    cdf = np.cumsum(weights / weights.sum())

    w_in = rng.uniform(-0.5 / dim, 0.5 / dim, size=(vocab_size, dim))
    w_out = np.zeros((vocab_size, dim))
    losses: list[float] = []
    lr_floor = lr / 10.0
    n = len(pairs)
    for epoch in range(epochs):
        order = rng.permutation(n)
        negs = np.searchsorted(cdf, rng.random((n, negatives))).astype(np.int64)
        lr_start = lr + (lr_floor - lr) * (epoch / epochs)
        lr_end = lr + (lr_floor - lr) * ((epoch + 1) / epochs)
        mean_loss = kernels.sgns_epoch(
            centers_all[order], contexts_all[order], negs, w_in, w_out, lr_start, lr_end
        )
        losses.append(float(mean_loss))
        logger.debug("skip-gram epoch %d: mean loss %.4f", epoch, mean_loss)
    w_in[PAD_ID] = 0.0
    return w_in, losses


def embed(
    chars: str,
    char_vocab: Vocab,
    char_table: np.ndarray,
    ngram_vocab: Vocab | None = None,
    ngram_table: np.ndarray | None = None,
    order: int | None = None,
) -> np.ndarray:
    """Concatenated per-character input representation [Len, d_cha(+d_big)].

    Character-only mode (no n-gram table) returns just the character rows;
    unseen items map to the UNK row.
    """
    rows = char_table[char_vocab.ids(list(chars))]
    if ngram_vocab is None or ngram_table is None or order is None:
        return rows
    grams = ngram_table[ngram_vocab.ids(ngram_features(chars, order))]
    return np.concatenate([rows, grams], axis=1)


def save_embedding(path: str, vocab: Vocab, table: np.ndarray) -> None:
    """Text format: header "vocab_size dim", then token + values per row."""
    by_id = sorted(vocab.token_to_id.items(), key=lambda kv: kv[1])
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{table.shape[0]} {table.shape[1]}\n")
        for tok, i in by_id:
            vals = " ".join(f"{x:.6f}" for x in table[i])
            fh.write(f"{tok} {vals}\n")


def load_embedding(path: str) -> tuple[Vocab, np.ndarray]:
    with open(path, encoding="utf-8") as fh:
        head = fh.readline().split()
        size, dim = int(head[0]), int(head[1])
        table = np.zeros((size, dim))
        mapping: dict[str, int] = {}
        for i in range(size):
            parts = fh.readline().rstrip("\n").split(" ")
            mapping[parts[0]] = i
            table[i] = [float(x) for x in parts[1 : dim + 1]]
    return Vocab(token_to_id=mapping), table
