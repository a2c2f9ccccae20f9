"""Per-sentence informativeness scores and top-n selection.

Five strategies rank unlabeled sentences, higher = select first:

- ``rand``: uniform noise (seeded per sentence id, so scores do not depend
  on scoring order);
- ``lc``: least confidence, 1 - p(best path | x) from the Viterbi posterior;
- ``mte``: total token entropy of the CRF marginals, in nats;
- ``mtm``: negated minimum token margin (best minus second-best marginal);
- ``nelp``: alpha * normalized entropy + beta * predicted loss, where the
  normalized entropy divides the entropy total by sqrt(Len) * ln(N) so it
  shares the predicted loss's scale.
"""

from __future__ import annotations

import csv
import hashlib
import logging
from dataclasses import dataclass

import numpy as np

from .corpus import Sentence
from .joint import JointModel
from .segmenter import N_TAGS

logger = logging.getLogger(__name__)

STRATEGY_KINDS = ("rand", "lc", "mte", "mtm", "nelp")


@dataclass
class StrategyScore:
    sentence_id: int
    score: float
    normalized_entropy: float | None = None
    predicted_loss: float | None = None


@dataclass
class StrategyConfig:
    kind: str = "nelp"
    alpha: float = 1.0
    beta: float = 1.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.kind not in STRATEGY_KINDS:
            raise ValueError(f"unknown strategy {self.kind!r}, expected {STRATEGY_KINDS}")
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("strategy weights must be non-negative")
        if self.kind == "nelp" and self.alpha + self.beta <= 0:
            raise ValueError("nelp needs alpha + beta > 0")


def token_entropy_total(marginals: np.ndarray) -> float:
    """Sum over tokens of the marginal entropy -sum_k m log m (nats)."""
    m = np.clip(marginals, 1e-300, 1.0)
    return float(-(marginals * np.log(m)).sum())


def normalized_entropy(marginals: np.ndarray) -> float:
    """Token entropy total scaled by 1/(sqrt(Len) * ln N); lands in
    [0, sqrt(Len)], hitting the bounds at one-hot resp. uniform rows."""
    length = marginals.shape[0]
    return token_entropy_total(marginals) / (np.sqrt(length) * np.log(N_TAGS))


def min_token_margin(marginals: np.ndarray) -> float:
    part = np.partition(marginals, -2, axis=1)
    return float((part[:, -1] - part[:, -2]).min())


def _rand_score(seed: int, sentence_id: int) -> float:
    digest = hashlib.blake2b(
        f"{seed}:{sentence_id}".encode(), digest_size=8
    ).digest()
    return int.from_bytes(digest, "big") / 2**64


def score_lc(sentence: Sentence, model: JointModel) -> StrategyScore:
    out = model.infer([sentence], want_marginals=False)[0]
    return StrategyScore(sentence.id, 1.0 - float(np.exp(out.viterbi_logprob)))


def score_mte(sentence: Sentence, model: JointModel) -> StrategyScore:
    out = model.infer([sentence])[0]
    return StrategyScore(sentence.id, token_entropy_total(out.marginals))


def score_mtm(sentence: Sentence, model: JointModel) -> StrategyScore:
    out = model.infer([sentence])[0]
    return StrategyScore(sentence.id, -min_token_margin(out.marginals))


def score_nelp(
    sentence: Sentence, model: JointModel, alpha: float = 1.0, beta: float = 1.0
) -> StrategyScore:
    if beta > 0 and not model.head_trained:
        raise ValueError(
            "nelp with beta > 0 needs a jointly trained loss head "
            "(train with lam > 0 or set beta = 0)"
        )
    out = model.infer([sentence], want_head=beta > 0)[0]
    ne = normalized_entropy(out.marginals)
    pl = out.predicted_loss if beta > 0 else 0.0
    return StrategyScore(
        sentence.id, alpha * ne + beta * pl,
        normalized_entropy=ne, predicted_loss=pl,
    )


def score_pool(
    model: JointModel | None,
    pool: list[Sentence],
    config: StrategyConfig,
    batch_size: int = 64,
) -> list[StrategyScore]:
    """Score every pool sentence under the configured strategy (batched)."""
    if config.kind == "rand":
        return [
            StrategyScore(s.id, _rand_score(config.seed, s.id)) for s in pool
        ]
    if model is None:
        raise ValueError(f"strategy {config.kind!r} needs a trained model")
    want_head = config.kind == "nelp" and config.beta > 0
    if want_head and not model.head_trained:
        raise ValueError(
            "nelp with beta > 0 needs a jointly trained loss head "
            "(train with lam > 0 or set beta = 0)"
        )
    want_marginals = config.kind != "lc"
    outs = model.infer(
        pool, batch_size=batch_size,
        want_marginals=want_marginals, want_head=want_head,
    )
    scores: list[StrategyScore] = []
    for s, out in zip(pool, outs):
        if config.kind == "lc":
            scores.append(StrategyScore(s.id, 1.0 - float(np.exp(out.viterbi_logprob))))
        elif config.kind == "mte":
            scores.append(StrategyScore(s.id, token_entropy_total(out.marginals)))
        elif config.kind == "mtm":
            scores.append(StrategyScore(s.id, -min_token_margin(out.marginals)))
        else:  # nelp
            ne = normalized_entropy(out.marginals)
            pl = out.predicted_loss if want_head else 0.0
            scores.append(
                StrategyScore(
                    s.id, config.alpha * ne + config.beta * pl,
                    normalized_entropy=ne, predicted_loss=pl,
                )
            )
    return scores


def select_top_n(scores: list[StrategyScore], n: int) -> list[int]:
    """Ids of the n highest scores; ties break toward the smaller id. Pools
    smaller than n are returned whole; an empty pool yields a warning."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    if not scores:
        logger.warning("selection requested from an empty pool")
        return []
    ranked = sorted(scores, key=lambda sc: (-sc.score, sc.sentence_id))
    return [sc.sentence_id for sc in ranked[:n]]


def dump_scores(path: str, scores: list[StrategyScore], strategy: str) -> None:
    """One comma-separated record per sentence for offline analysis."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["sentence_id", "strategy", "score", "normalized_entropy", "predicted_loss"])
        for sc in scores:
            writer.writerow([
                sc.sentence_id, strategy, f"{sc.score:.8g}",
                "" if sc.normalized_entropy is None else f"{sc.normalized_entropy:.8g}",
                "" if sc.predicted_loss is None else f"{sc.predicted_loss:.8g}",
            ])
