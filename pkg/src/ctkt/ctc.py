"""CTC loss (exact, log-space) and decoding.

Loss runs a forward recursion over the blank-augmented state lattice
(2N+1 states); the backward pass aggregates alpha/beta occupancies into
an analytic gradient w.r.t. the per-frame log-probabilities. Decoding
covers greedy collapse, prefix beam search with optional shallow LM
fusion, and joint rescoring of an n-best list.

Blank index is 0 everywhere.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ContractError, DimensionError, InfeasibleAlignmentError

BLANK = 0

NEG_INF = -np.inf


def min_frames(target) -> int:
    """Minimum frame count that can emit `target` under CTC."""
    n = len(target)
    repeats = sum(1 for i in range(1, n) if target[i] == target[i - 1])
    return n + repeats


def _expand(target):
    """Blank-augmented state labels and skip-transition mask."""
    labels = np.zeros(2 * len(target) + 1, dtype=np.int64)
    labels[1::2] = np.asarray(target, dtype=np.int64)
    skip_ok = np.zeros(labels.size, dtype=bool)
    for s in range(3, labels.size, 2):
        skip_ok[s] = labels[s] != labels[s - 2]
    return labels, skip_ok


def _lse3(a, b, c):
    m = np.maximum(np.maximum(a, b), c)
    with np.errstate(invalid="ignore"):
        out = m + np.log(np.exp(a - m) + np.exp(b - m) + np.exp(c - m))
    return np.where(np.isfinite(m), out, NEG_INF)


def _shift_down(x):
    out = np.empty_like(x)
    out[0] = NEG_INF
    out[1:] = x[:-1]
    return out


def _shift_down2(x, mask):
    out = np.full_like(x, NEG_INF)
    out[2:] = x[:-2]
    return np.where(mask, out, NEG_INF)


def _forward_alphas(lp, labels, skip_ok):
    m_frames = lp.shape[0]
    emit = lp[:, labels]  # (M, S)
    alphas = np.full((m_frames, labels.size), NEG_INF)
    alphas[0, 0] = emit[0, 0]
    if labels.size > 1:
        alphas[0, 1] = emit[0, 1]
    for t in range(1, m_frames):
        prev = alphas[t - 1]
        alphas[t] = _lse3(prev, _shift_down(prev), _shift_down2(prev, skip_ok)) + emit[t]
    last = alphas[m_frames - 1]
    if labels.size > 1:
        log_z = np.logaddexp(last[-1], last[-2])
    else:
        log_z = last[-1]
    return alphas, float(log_z)


def _backward_betas(lp, labels, skip_ok):
    m_frames = lp.shape[0]
    emit = lp[:, labels]
    betas = np.full((m_frames, labels.size), NEG_INF)
    betas[m_frames - 1, -1] = emit[m_frames - 1, -1]
    if labels.size > 1:
        betas[m_frames - 1, -2] = emit[m_frames - 1, -2]
    skip_from = np.zeros(labels.size, dtype=bool)
    skip_from[: labels.size - 2] = skip_ok[2:]
    for t in range(m_frames - 2, -1, -1):
        nxt = betas[t + 1]
        move = np.empty_like(nxt)
        move[-1] = NEG_INF
        move[:-1] = nxt[1:]
        skip = np.full_like(nxt, NEG_INF)
        skip[:-2] = nxt[2:]
        skip = np.where(skip_from, skip, NEG_INF)
        betas[t] = _lse3(nxt, move, skip) + emit[t]
    return betas


def _ctc_grad_matrix(lp, target):
    """d(-log P(target|lp)) / d lp, as a dense (M, V) matrix."""
    labels, skip_ok = _expand(target)
    alphas, log_z = _forward_alphas(lp, labels, skip_ok)
    betas = _backward_betas(lp, labels, skip_ok)
    emit = lp[:, labels]
    through = alphas + betas - emit  # log prob of all paths passing (t, s)
    grad = np.zeros_like(lp)
    with np.errstate(invalid="ignore"):
        occ = np.exp(through - log_z)
    occ = np.where(np.isfinite(through), occ, 0.0)
    for s, lab in enumerate(labels):
        grad[:, lab] -= occ[:, s]
    return grad


def ctc_loss(logp: Tensor, target) -> Tensor:
    """-log P(target | logp) over the blank-augmented lattice.

    `logp` rows must be log-distributions (caller's obligation; the
    model emits them through log_softmax). Differentiable.
    """
    if logp.data.ndim != 2:
        raise DimensionError(f"log-prob matrix must be 2-d, got {logp.data.shape}")
    m_frames, vocab = logp.data.shape
    if vocab < 2:
        raise ContractError("vocabulary must include blank plus at least one token")
    target = tuple(int(y) for y in target)
    if any(y < 1 or y >= vocab for y in target):
        raise ContractError(f"target tokens must lie in [1, {vocab - 1}]")
    need = min_frames(target)
    if m_frames < need:
        raise InfeasibleAlignmentError(
            f"target needs at least {need} frames (repeats require separating blanks), got {m_frames}"
        )

    labels, skip_ok = _expand(target)
    _, log_z = _forward_alphas(logp.data, labels, skip_ok)
    out = Tensor(-log_z)

    def bwd(g):
        return [(logp, g * _ctc_grad_matrix(logp.data, target))]

    return ad._record(out, (logp,), bwd)


def collapse(path) -> tuple:
    """CTC collapse: merge adjacent repeats, then drop blanks."""
    out = []
    prev = None
    for p in path:
        if p != prev:
            if p != BLANK:
                out.append(int(p))
            prev = p
    return tuple(out)


def greedy_decode(logp_values: np.ndarray) -> tuple:
    """Frame-wise argmax (ties to the lowest index) then collapse."""
    return collapse(np.argmax(logp_values, axis=1))


def prefix_beam_search(logp_values: np.ndarray, beam: int, lm=None, lm_weight: float = 0.0):
    """Prefix beam search merging blank/non-blank mass per prefix.

    Returns up to `beam` (transcript, score) pairs, best first; the
    score is log P(prefix) + lm_weight * lm log-prob. The LM scores each
    emitted token once via `lm.next_token_logprobs(prefix)`. Ties break
    lexicographically on the token sequence.
    """
    if not isinstance(beam, int) or beam < 1:
        raise ContractError(f"beam must be a positive integer, got {beam!r}")
    if lm_weight < 0:
        raise ContractError(f"lm_weight must be >= 0, got {lm_weight}")
    use_lm = lm_weight > 0
    if use_lm and lm is None:
        raise ContractError("lm_weight > 0 requires a language model")

    m_frames, vocab = logp_values.shape
    beams = {(): [0.0, NEG_INF]}  # prefix -> [log p ending in blank, in non-blank]
    lm_scores = {(): 0.0}
    lm_cache = {}

    def lm_vec(prefix):
        v = lm_cache.get(prefix)
        if v is None:
            v = lm.next_token_logprobs(prefix)
            if len(v) < vocab - 1:
                raise ContractError(
                    f"LM scores {len(v)} tokens but decoder needs {vocab - 1}"
                )
            lm_cache[prefix] = v
        return v

    def score(prefix, pair):
        s = np.logaddexp(pair[0], pair[1])
        if use_lm:
            s = s + lm_weight * lm_scores[prefix]
        return float(s)

    for t in range(m_frames):
        lp = logp_values[t]
        nxt = {}
        for prefix in sorted(beams):
            p_b, p_nb = beams[prefix]
            total = np.logaddexp(p_b, p_nb)
            entry = nxt.setdefault(prefix, [NEG_INF, NEG_INF])
            entry[0] = np.logaddexp(entry[0], total + lp[BLANK])
            if prefix:
                entry[1] = np.logaddexp(entry[1], p_nb + lp[prefix[-1]])
            for c in range(1, vocab):
                ext = prefix + (c,)
                src = p_b if (prefix and c == prefix[-1]) else total
                if src == NEG_INF:
                    continue
                e2 = nxt.setdefault(ext, [NEG_INF, NEG_INF])
                e2[1] = np.logaddexp(e2[1], src + lp[c])
                if use_lm and ext not in lm_scores:
                    lm_scores[ext] = lm_scores[prefix] + float(lm_vec(prefix)[c - 1])
        ranked = sorted(nxt.items(), key=lambda kv: (-score(kv[0], kv[1]), kv[0]))
        beams = dict(ranked[:beam])

    final = sorted(beams.items(), key=lambda kv: (-score(kv[0], kv[1]), kv[0]))
    return [(prefix, score(prefix, pair)) for prefix, pair in final]


def joint_rescore(nbest, att_scorer, gamma: float):
    """Convex rescore of (transcript, ctc_score) candidates.

    score' = gamma * ctc_score + (1 - gamma) * att_scorer(transcript);
    stable descending re-sort.
    """
    if not nbest:
        raise ContractError("nbest must be nonempty")
    if not (0.0 <= gamma <= 1.0):
        raise ContractError(f"gamma must lie in [0, 1], got {gamma}")
    rescored = [
        (transcript, gamma * ctc_score + (1.0 - gamma) * float(att_scorer(transcript)))
        for transcript, ctc_score in nbest
    ]
    return sorted(rescored, key=lambda pair: -pair[1])
