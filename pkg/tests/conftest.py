"""Shared fixtures and independent oracles.

The enumeration helpers below deliberately re-derive CRF quantities by
brute force over all tag paths (pure Python loops, no shared code with the
package kernels) so that dynamic-programming results can be checked against
an implementation that cannot share their bugs.
"""

import itertools

import numpy as np
import pytest

from segal.corpus import LabeledSentence, Sentence, words_to_tags

N_TAGS = 4
START, STOP = 4, 5


def enum_path_score(emis, trans, path):
    """Score of one tag path including START/STOP transitions."""
    s = trans[START, path[0]] + emis[0, path[0]]
    for t in range(1, len(path)):
        s += trans[path[t - 1], path[t]] + emis[t, path[t]]
    return s + trans[path[-1], STOP]


def enum_all(emis, trans):
    """Brute-force logZ, marginals and Viterbi for one sentence.

    emis: [L, N]; trans: [N+2, N+2]. Returns dict with logz, marginals
    [L, N], best_path tuple, best_score, and per-path scores.
    """
    L = emis.shape[0]
    paths = list(itertools.product(range(N_TAGS), repeat=L))
    scores = np.array([enum_path_score(emis, trans, p) for p in paths])
    m = scores.max()
    logz = m + np.log(np.exp(scores - m).sum())
    probs = np.exp(scores - logz)
    marginals = np.zeros((L, N_TAGS))
    for p, pr in zip(paths, probs):
        for t in range(L):
            marginals[t, p[t]] += pr
    best = int(np.argmax(scores))
    return {
        "logz": float(logz),
        "marginals": marginals,
        "best_path": paths[best],
        "best_score": float(scores[best]),
        "paths": paths,
        "scores": scores,
    }


def random_trans(rng, scale=0.8, grammar_mask=False):
    trans = rng.normal(scale=scale, size=(N_TAGS + 2, N_TAGS + 2))
    if grammar_mask:
        from segal.segmenter import LEGAL_TRANSITIONS

        trans = np.where(LEGAL_TRANSITIONS, trans, -np.inf)
    return trans


def toy_corpus(n_sentences=50, seed=0, words=("ab", "cde", "f", "gh", "i", "jkl")):
    """Small word-concatenation corpus with unambiguous decompositions."""
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n_sentences):
        ws = [words[j] for j in rng.integers(0, len(words), size=rng.integers(2, 7))]
        out.append(LabeledSentence(Sentence(i, "".join(ws)), words_to_tags(ws)))
    return out


def fd_check_params(loss_fn, params, h=1e-5, max_entries_per_param=40, seed=0):
    """Central-difference check of ``loss_fn`` against backward() gradients.

    ``params`` maps names to live Tensor objects used inside ``loss_fn``
    (e.g. a model's parameters); entries are perturbed in place. Large
    parameters are subsampled. Returns (max relative error, worst name).
    """
    from segal import autodiff as ad

    for t in params.values():
        t.grad = None
        t.requires_grad = True
    loss = loss_fn()
    loss.backward()
    analytic = {
        k: (t.grad.copy() if t.grad is not None else np.zeros_like(t.data))
        for k, t in params.items()
    }
    rng = np.random.default_rng(seed)
    worst, worst_name = 0.0, ""
    for name, t in params.items():
        flat = t.data.reshape(-1)
        idx = np.arange(flat.size)
        if flat.size > max_entries_per_param:
            idx = rng.choice(flat.size, size=max_entries_per_param, replace=False)
        for i in idx:
            orig = flat[i]
            flat[i] = orig + h
            with ad.no_grad():
                up = loss_fn().item()
            flat[i] = orig - h
            with ad.no_grad():
                down = loss_fn().item()
            flat[i] = orig
            numeric = (up - down) / (2 * h)
            ga = analytic[name].reshape(-1)[i]
            rel = abs(ga - numeric) / max(abs(ga), abs(numeric), 1e-2)
            if rel > worst:
                worst, worst_name = rel, f"{name}[{i}]"
    return worst, worst_name


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
