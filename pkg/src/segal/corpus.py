"""Data model for segmented text: BMES codec, dataset splits, word-level F1.

A sentence is a run of unicode characters without internal whitespace; its
annotation is a same-length string over the tag alphabet ``BMES`` (Begin /
Middle / End of a multi-character word, Single-character word). Corpus files
are UTF-8 text, one sentence per line; labeled files separate words with
single ASCII spaces, unlabeled files are raw character runs.
"""

from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

logger = logging.getLogger(__name__)

TAGS = "BMES"
TAG_TO_ID = {t: i for i, t in enumerate(TAGS)}

# legal successor sets of the BMES grammar
_NEXT = {"B": "ME", "M": "ME", "E": "BS", "S": "BS"}
_FIRST = "BS"
_LAST = "ES"

# characters eligible as soft split points when a line overflows max_len
SENTENCE_END_CHARS = "。！？!?；;"

DEFAULT_MAX_LEN = 200


class CorpusFormatError(ValueError):
    """A corpus line or word violates the expected file format."""


class TagGrammarError(ValueError):
    """A tag string violates the BMES transition grammar."""


@dataclass(frozen=True)
class Sentence:
    """A character run to segment; ``chars`` holds the raw text."""

    id: int
    chars: str

    def __len__(self) -> int:
        return len(self.chars)


@dataclass(frozen=True)
class LabeledSentence:
    sentence: Sentence
    tags: str

    def __post_init__(self) -> None:
        if len(self.tags) != len(self.sentence.chars):
            raise TagGrammarError(
                f"sentence {self.sentence.id}: {len(self.sentence.chars)} chars "
                f"vs {len(self.tags)} tags"
            )
        validate_tags(self.tags)

    def words(self) -> list[str]:
        return tags_to_words(self.sentence.chars, self.tags)


@dataclass
class DatasetSplit:
    """Train/test/validation partition, with train further split into an
    initially labeled part and an unlabeled pool."""

    training: list[LabeledSentence]
    testing: list[LabeledSentence]
    validation: list[LabeledSentence]
    labeled: list[LabeledSentence]
    unlabeled: list[LabeledSentence]


@dataclass
class SegmentationEval:
    precision: float
    recall: float
    f1: float
    gold_words: int
    predicted_words: int
    correct_words: int

    def report(self) -> str:
        return (
            f"precision={self.precision:.4f} recall={self.recall:.4f} "
            f"f1={self.f1:.4f} (gold={self.gold_words} "
            f"pred={self.predicted_words} correct={self.correct_words})"
        )


def validate_tags(tags: str) -> None:
    """Raise TagGrammarError unless ``tags`` satisfies the BMES grammar."""
    if not tags:
        raise TagGrammarError("empty tag string")
    for t in tags:
        if t not in TAG_TO_ID:
            raise TagGrammarError(f"unknown tag {t!r}")
    if tags[0] not in _FIRST:
        raise TagGrammarError(f"sequence starts with {tags[0]!r}")
    if tags[-1] not in _LAST:
        raise TagGrammarError(f"sequence ends with {tags[-1]!r}")
    for a, b in zip(tags, tags[1:]):
        if b not in _NEXT[a]:
            raise TagGrammarError(f"illegal transition {a!r} -> {b!r}")


def is_valid_tags(tags: str) -> bool:
    try:
        validate_tags(tags)
    except TagGrammarError:
        return False
    return True


def words_to_tags(words: list[str]) -> str:
    """Encode a word sequence as a BMES tag string.

    A 1-character word maps to ``S``; a k-character word maps to
    ``B M*(k-2) E``.
    """
    parts = []
    for w in words:
        if not w:
            raise CorpusFormatError("empty word in segmented line")
        if len(w) == 1:
            parts.append("S")
        else:
            parts.append("B" + "M" * (len(w) - 2) + "E")
    return "".join(parts)


def tags_to_words(chars: str, tags: str) -> list[str]:
    """Decode a BMES tag string back into the word sequence it denotes."""
    if len(chars) != len(tags):
        raise TagGrammarError(f"{len(chars)} chars vs {len(tags)} tags")
    validate_tags(tags)
    words = []
    start = 0
    for i, t in enumerate(tags):
        if t in _LAST:
            words.append(chars[start : i + 1])
            start = i + 1
    return words


def tags_to_spans(tags: str) -> list[tuple[int, int]]:
    """Word spans as half-open (start, end) character offsets."""
    validate_tags(tags)
    spans = []
    start = 0
    for i, t in enumerate(tags):
        if t in _LAST:
            spans.append((start, i + 1))
            start = i + 1
    return spans


def boundaries_to_tags(length: int, boundaries: list[int]) -> str:
    """Tags for a sentence of ``length`` chars cut after the given offsets.

    ``boundaries`` lists word-end positions strictly between 0 and length
    (exclusive), strictly increasing; the sentence end is implicit.
    """
    if length < 1:
        raise CorpusFormatError("sentence must have at least one character")
    prev = 0
    words = []
    for b in boundaries:
        if not (0 < b < length) or b <= prev:
            raise CorpusFormatError(
                f"boundary {b} invalid for length {length} after {prev}"
            )
        words.append("x" * (b - prev))
        prev = b
    words.append("x" * (length - prev))
    return words_to_tags(words)


def tags_to_boundaries(tags: str) -> list[int]:
    """Inverse of boundaries_to_tags: internal word-end offsets."""
    return [end for _, end in tags_to_spans(tags)[:-1]]


def evaluate_f1(
    gold: list[str], predicted: list[str], lengths: list[int] | None = None
) -> SegmentationEval:
    """Word-span precision/recall/F1 between gold and predicted tag strings.

    Words are compared as (start, end) character spans; a predicted word is
    correct iff the same span is a gold word.
    """
    if len(gold) != len(predicted):
        raise ValueError(f"{len(gold)} gold vs {len(predicted)} predicted")
    if not gold:
        raise ValueError("cannot evaluate an empty corpus")
    n_gold = n_pred = n_correct = 0
    for g, p in zip(gold, predicted):
        if len(g) != len(p):
            raise ValueError(f"length mismatch: {len(g)} vs {len(p)} tags")
        gs = set(tags_to_spans(g))
        ps = set(tags_to_spans(p))
        n_gold += len(gs)
        n_pred += len(ps)
        n_correct += len(gs & ps)
    precision = n_correct / n_pred if n_pred else 0.0
    recall = n_correct / n_gold if n_gold else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return SegmentationEval(precision, recall, f1, n_gold, n_pred, n_correct)


def split_dataset(
    corpus: list[LabeledSentence],
    ratios: tuple[float, float, float] = (0.6, 0.2, 0.2),
    labeled_fraction: float = 0.3,
    seed: int = 0,
) -> DatasetSplit:
    """Deterministically partition a corpus into train/test/val, then split
    train into an initial labeled set and an unlabeled pool."""
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"ratios must sum to 1, got {ratios}")
    if not 0.0 < labeled_fraction < 1.0:
        raise ValueError(f"labeled_fraction must be in (0, 1), got {labeled_fraction}")
    if len(corpus) < 10:
        raise ValueError(f"corpus too small to split: {len(corpus)} sentences")
    order = np.random.default_rng(seed).permutation(len(corpus))
    shuffled = [corpus[i] for i in order]
    n = len(shuffled)
    i1 = round(n * ratios[0])
    i2 = round(n * (ratios[0] + ratios[1]))
    training, testing, validation = shuffled[:i1], shuffled[i1:i2], shuffled[i2:]
    k = round(len(training) * labeled_fraction)
    return DatasetSplit(
        training=training,
        testing=testing,
        validation=validation,
        labeled=training[:k],
        unlabeled=training[k:],
    )


def word_length_census(corpus: list[LabeledSentence]) -> dict[int, int]:
    """Count words per character length over a labeled corpus."""
    counts: Counter[int] = Counter()
    for ls in corpus:
        for start, end in tags_to_spans(ls.tags):
            counts[end - start] += 1
    return dict(counts)


def _clean_line(line: str) -> str:
    return "".join(ch for ch in line if not ch.isspace())


def _chunk_line(chars: str, max_len: int) -> list[str]:
    """Split an overlong character run at sentence-ending punctuation where
    possible, hard-truncating otherwise. Splits are logged."""
    chunks = []
    rest = chars
    while len(rest) > max_len:
        window = rest[:max_len]
        cut = max((window.rfind(c) for c in SENTENCE_END_CHARS), default=-1)
        if cut < 0:
            cut = max_len - 1
        chunks.append(rest[: cut + 1])
        rest = rest[cut + 1 :]
    if rest:
        chunks.append(rest)
    return chunks


@dataclass
class _LineSplitter:
    max_len: int
    next_id: int = 0
    overflowed: int = 0
    skipped: list[int] = field(default_factory=list)


def load_labeled_corpus(
    path: str, max_len: int = DEFAULT_MAX_LEN
) -> list[LabeledSentence]:
    """Read a labeled corpus file (one sentence per line, space-separated
    words). Overlong sentences are split at punctuation or truncated."""
    out: list[LabeledSentence] = []
    n_over = 0
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            words = line.split()
            if not words:
                continue
            chars = "".join(words)
            if any(ch.isspace() for ch in chars):
                raise CorpusFormatError(f"{path}:{lineno}: whitespace inside word")
            if len(chars) <= max_len:
                out.append(
                    LabeledSentence(Sentence(len(out), chars), words_to_tags(words))
                )
                continue
            # re-segment each chunk by walking the original word list
            n_over += 1
            for chunk in _chunk_line(chars, max_len):
                chunk_words, taken = [], 0
                while taken < len(chunk) and words:
                    w = words.pop(0)
                    if taken + len(w) <= len(chunk):
                        chunk_words.append(w)
                        taken += len(w)
                    else:
                        head, tail = w[: len(chunk) - taken], w[len(chunk) - taken :]
                        chunk_words.append(head)
                        words.insert(0, tail)
                        taken = len(chunk)
                out.append(
                    LabeledSentence(
                        Sentence(len(out), chunk), words_to_tags(chunk_words)
                    )
                )
    if n_over:
        logger.info("%s: split %d lines longer than %d chars", path, n_over, max_len)
    return out


def load_unlabeled_corpus(path: str, max_len: int = DEFAULT_MAX_LEN) -> list[Sentence]:
    """Read an unlabeled corpus file (one raw sentence per line)."""
    out: list[Sentence] = []
    n_over = 0
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            chars = _clean_line(line)
            if not chars:
                continue
            if len(chars) > max_len:
                n_over += 1
            for chunk in _chunk_line(chars, max_len):
                out.append(Sentence(len(out), chunk))
    if n_over:
        logger.info("%s: split %d lines longer than %d chars", path, n_over, max_len)
    return out


def save_labeled_corpus(path: str, corpus: list[LabeledSentence]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for ls in corpus:
            fh.write(" ".join(ls.words()) + "\n")


def save_unlabeled_corpus(path: str, sentences: list[Sentence]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for s in sentences:
            fh.write(s.chars + "\n")
