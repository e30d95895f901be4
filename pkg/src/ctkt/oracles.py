"""Independent brute-force references for the CTC dual-route checks.

Everything here enumerates frame paths directly and never touches the
recursions in `ctc`, so it can serve as the trusted side of an
equivalence test.
"""

from __future__ import annotations

import itertools
import math

import numpy as np

from .ctc import collapse


def brute_force_neg_log_prob(logp_values: np.ndarray, target) -> float:
    """-log sum over all V^M frame paths collapsing to `target`."""
    m_frames, vocab = logp_values.shape
    target = tuple(int(y) for y in target)
    acc = -math.inf
    for path in itertools.product(range(vocab), repeat=m_frames):
        if collapse(path) != target:
            continue
        lp = float(sum(logp_values[t, k] for t, k in enumerate(path)))
        acc = np.logaddexp(acc, lp)
    if acc == -math.inf:
        raise ValueError("no path collapses to target")
    return -float(acc)


def exhaustive_posteriors(logp_values: np.ndarray) -> dict:
    """Exact log posterior of every reachable transcript."""
    m_frames, vocab = logp_values.shape
    post = {}
    for path in itertools.product(range(vocab), repeat=m_frames):
        lp = float(sum(logp_values[t, k] for t, k in enumerate(path)))
        key = collapse(path)
        post[key] = np.logaddexp(post.get(key, -math.inf), lp)
    return {k: float(v) for k, v in post.items()}


def posterior_argmax(logp_values: np.ndarray):
    """Best transcript under the exact posterior (lexicographic ties)."""
    post = exhaustive_posteriors(logp_values)
    best = min(post.items(), key=lambda kv: (-kv[1], kv[0]))
    return best[0], best[1]


def random_log_prob_matrix(rng, m_frames: int, vocab: int, peaked: bool = False) -> np.ndarray:
    """Random rows that are exact log-distributions."""
    if peaked:
        logits = rng.standard_normal((m_frames, vocab))
        logits[np.arange(m_frames), rng.integers(0, vocab, size=m_frames)] += 12.0
    else:
        logits = rng.standard_normal((m_frames, vocab)) * 1.5
    logits = logits - logits.max(axis=1, keepdims=True)
    return logits - np.log(np.exp(logits).sum(axis=1, keepdims=True))


def all_transcripts(vocab: int, max_len: int):
    """Every token sequence (no blanks) up to max_len; includes empty."""
    for n in range(max_len + 1):
        yield from itertools.product(range(1, vocab), repeat=n)
