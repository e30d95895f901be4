"""Training recipe, evaluation and error metrics.

Recipe: Adam with linear-warmup/inverse-sqrt schedule, per-epoch greedy
dev CER, early stopping (a streak of `patience` non-improving epochs is
tolerated, one more stops), then element-wise averaging of the last few
per-epoch parameter snapshots. Per-iteration forward/backward wall time
is recorded alongside the losses.
"""

from __future__ import annotations

import os
import time
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import ctc as ctc_mod
from . import losses as loss_mod
from . import model as model_mod
from . import optim
from .errors import ContractError


@dataclass
class TrainConfig:
    epochs: int = 15
    batch_size: int = 16
    base_lr: float = 0.1
    warmup: int = 500
    patience: int = 3
    average_last: int = 10
    seed: int = 1
    loss: loss_mod.LossConfig = field(default_factory=loss_mod.LossConfig)

    def __post_init__(self):
        if self.warmup < 1:
            raise ContractError(f"warmup must be >= 1, got {self.warmup}")
        if self.patience < 1:
            raise ContractError(f"patience must be >= 1, got {self.patience}")
        if self.average_last < 1:
            raise ContractError(f"average_last must be >= 1, got {self.average_last}")
        if self.epochs < 1 or self.batch_size < 1:
            raise ContractError("epochs and batch_size must be >= 1")


@dataclass
class DecodeConfig:
    mode: str = "greedy"  # greedy | beam | joint
    beam: int = 10
    lm_weight: float = 0.0
    joint_gamma: float = 0.5

    def __post_init__(self):
        if self.mode not in ("greedy", "beam", "joint"):
            raise ContractError(f"decode mode must be greedy/beam/joint, got {self.mode!r}")


def cer(hyp, ref) -> float:
    """Levenshtein distance (unit costs) over reference length; may exceed 1."""
    if len(ref) == 0:
        raise ContractError("reference transcript must be nonempty")
    return edit_distance(hyp, ref) / len(ref)


def edit_distance(a, b) -> int:
    a, b = tuple(a), tuple(b)
    prev = list(range(len(b) + 1))
    for i, x in enumerate(a, start=1):
        cur = [i] + [0] * len(b)
        for j, y in enumerate(b, start=1):
            cur[j] = min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (x != y))
        prev = cur
    return prev[-1]


def worker_count() -> int:
    """Evaluation worker cap; CTKT_THREADS wins over the single default."""
    raw = os.environ.get("CTKT_THREADS", "")
    if raw.strip():
        try:
            n = int(raw)
        except ValueError as exc:
            raise ContractError(f"CTKT_THREADS must be an integer, got {raw!r}") from exc
        return max(1, min(n, os.cpu_count() or 1))
    return 1


def _map_utts(fn, utts):
    n = worker_count()
    if n <= 1 or len(utts) < 4:
        return [fn(u) for u in utts]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, utts))


def build_embed_cache(mp: model_mod.ModelParams, teacher, utts) -> dict | None:
    """Frozen teacher embeddings are constants per transcript: cache once."""
    if teacher is None or mp.cfg.variant == "vanilla":
        return None
    cache = {}
    for u in utts:
        model_mod._teacher_targets(mp, u, teacher, cache)
    return cache


@dataclass
class EvalResult:
    corpus_cer: float
    per_utt: list  # dicts: id, ref, hyp, distance, cer


def evaluate(mp: model_mod.ModelParams, utts, decode: DecodeConfig,
             fusion_lm=None, ktcl_teacher=None) -> EvalResult:
    """Decode every utterance; corpus CER = total distance / total ref length."""
    if not utts:
        raise ContractError("evaluation split is empty")
    if decode.mode == "joint":
        if mp.cfg.variant != "kt-cl":
            raise ContractError(f"joint decoding needs kt-cl heads, model is {mp.cfg.variant!r}")
        if ktcl_teacher is None:
            raise ContractError("joint decoding needs the kt-cl teacher")
    if decode.mode in ("beam", "joint") and decode.lm_weight > 0 and fusion_lm is None:
        raise ContractError("lm_weight > 0 requires a fusion LM")

    def run(u):
        with ad.no_grad():
            h = model_mod.encode(mp, u.frames)
            logp = model_mod.ctc_log_probs(mp, h).data
        if decode.mode == "greedy":
            hyp = ctc_mod.greedy_decode(logp)
        else:
            nbest = ctc_mod.prefix_beam_search(
                logp, decode.beam, lm=fusion_lm, lm_weight=decode.lm_weight
            )
            if decode.mode == "joint":
                nbest = ctc_mod.joint_rescore(
                    nbest,
                    lambda cand: model_mod.ktcl_sequence_score(mp, h, ktcl_teacher, cand),
                    decode.joint_gamma,
                )
            hyp = nbest[0][0]
        dist = edit_distance(hyp, u.transcript)
        return {
            "id": u.id,
            "ref": list(u.transcript),
            "hyp": list(hyp),
            "distance": dist,
            "cer": dist / len(u.transcript) if u.transcript else float(dist > 0),
        }

    per_utt = _map_utts(run, utts)
    total_dist = sum(r["distance"] for r in per_utt)
    total_ref = sum(len(r["ref"]) for r in per_utt)
    if total_ref == 0:
        raise ContractError("evaluation references are all empty")
    return EvalResult(corpus_cer=total_dist / total_ref, per_utt=per_utt)


@dataclass
class TrainResult:
    params: model_mod.ModelParams
    history: list            # one dict per epoch
    epoch_snapshots: int     # how many snapshots were averaged
    stopped_early: bool


def train_experiment(model_cfg: model_mod.ModelConfig, train_cfg: TrainConfig,
                     corpus, teacher=None, epoch_callback=None) -> TrainResult:
    """Full recipe over corpus.train with per-epoch dev CER early stopping."""
    for split in ("train", "dev"):
        if not corpus.splits.get(split):
            raise ContractError(f"corpus split {split!r} is empty")
    train_utts = corpus.train
    mp = model_mod.ModelParams.build(model_cfg, train_cfg.seed)
    state = optim.AdamState(mp.params)
    embed_cache = build_embed_cache(mp, teacher, train_utts)
    drop_rng = np.random.default_rng(np.random.SeedSequence([train_cfg.seed, 0x53]))
    shuffle_rng = np.random.default_rng(np.random.SeedSequence([train_cfg.seed, 0x52]))

    snapshots = deque(maxlen=train_cfg.average_last)
    history = []
    best_cer = np.inf
    bad_streak = 0
    stopped = False
    step = 0

    for epoch in range(1, train_cfg.epochs + 1):
        order = shuffle_rng.permutation(len(train_utts))
        sums = {"l_ctc": 0.0, "l_aux": 0.0, "l_ce": 0.0, "l_mtl": 0.0}
        aux_seen = ce_seen = 0
        n_iters = 0
        fwd_s = bwd_s = 0.0
        lr = train_cfg.base_lr
        for lo in range(0, len(order), train_cfg.batch_size):
            batch = [train_utts[i] for i in order[lo : lo + train_cfg.batch_size]]
            optim.zero_grads(mp.params)
            inv_b = 1.0 / len(batch)
            for u in batch:
                t0 = time.perf_counter()
                with ad.new_graph():
                    rep = model_mod.forward_variant(
                        mp, u, teacher=teacher, loss_cfg=train_cfg.loss,
                        drop_rng=drop_rng, embed_cache=embed_cache,
                    )
                    scaled = ad.scale(rep.loss, inv_b)
                    t1 = time.perf_counter()
                    ad.backward(scaled)
                t2 = time.perf_counter()
                fwd_s += t1 - t0
                bwd_s += t2 - t1
                sums["l_ctc"] += rep.l_ctc
                sums["l_mtl"] += rep.l_mtl
                if rep.l_aux is not None:
                    sums["l_aux"] += rep.l_aux
                    aux_seen += 1
                if rep.l_ce is not None:
                    sums["l_ce"] += rep.l_ce
                    ce_seen += 1
            step += 1
            n_iters += 1
            lr = optim.lr_schedule(step, train_cfg.base_lr, train_cfg.warmup)
            optim.adam_step(mp.params, state, lr)

        n_utts = len(train_utts)
        dev = evaluate(mp, corpus.dev, DecodeConfig(mode="greedy"))
        record = {
            "epoch": epoch,
            "l_ctc": sums["l_ctc"] / n_utts,
            "l_mtl": sums["l_mtl"] / n_utts,
            "l_aux": sums["l_aux"] / aux_seen if aux_seen else None,
            "l_ce": sums["l_ce"] / ce_seen if ce_seen else None,
            "dev_cer": dev.corpus_cer,
            "fwd_s_per_iter": fwd_s / n_iters,
            "bwd_s_per_iter": bwd_s / n_iters,
            "iters": n_iters,
            "lr": lr,
        }
        history.append(record)
        snapshots.append(mp.clone_arrays())
        if epoch_callback is not None:
            epoch_callback(epoch, mp, record)

        if dev.corpus_cer < best_cer:
            best_cer = dev.corpus_cer
            bad_streak = 0
        else:
            bad_streak += 1
            if bad_streak > train_cfg.patience:
                stopped = True
                break

    averaged = average_snapshots(model_cfg, list(snapshots))
    return TrainResult(params=averaged, history=history,
                       epoch_snapshots=len(snapshots), stopped_early=stopped)


def average_snapshots(model_cfg: model_mod.ModelConfig, snapshots) -> model_mod.ModelParams:
    """Element-wise mean of parameter snapshots (checkpoint averaging)."""
    if not snapshots:
        raise ContractError("no snapshots to average")
    mp = model_mod.ModelParams.build(model_cfg, seed=0)
    mean = {k: np.mean([s[k] for s in snapshots], axis=0) for k in snapshots[0]}
    mp.load_arrays(mean)
    return mp
