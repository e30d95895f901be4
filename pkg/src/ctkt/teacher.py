"""Frozen seeded teacher LMs supplying per-token context embeddings.

A teacher is a small transformer over the corpus token vocabulary,
either bidirectional (masked self-attention absent) or unidirectional
(causal mask in every layer). Teachers come in two modes:

* "random": frozen at their seeded initialization;
* "fitted": a fixed two-epoch, seeded fit on the training transcripts
  (next-token prediction for unidirectional teachers, masked-token
  prediction for bidirectional ones), then frozen.

Embeddings average the token-embedding output and every layer output.
Unidirectional teachers double as shallow-fusion LMs via a readout tied
to the embedding table.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import losses, optim
from .alignment import AttentionParams, mha_cross, positional_queries, subsequent_mask
from .autodiff import Tensor
from .errors import ContractError

DIRECTIONALITIES = ("bidirectional", "unidirectional")
MODES = ("random", "fitted")

FIT_EPOCHS = 2  # fixed light fit; not a tunable
MASK_PROB = 0.25     # input corruption rate for the bidirectional fit
MASK_TO_RANDOM = 0.2  # corrupted slots that get a random token, not MASK


@dataclass
class TeacherConfig:
    vocab_size: int  # corpus tokens, excluding blank
    d_model: int = 64
    layers: int = 2
    heads: int = 4
    ffn_dim: int = 128
    directionality: str = "bidirectional"
    mode: str = "fitted"
    seed: int = 101
    fit_lr: float = 3e-3

    def __post_init__(self):
        if self.vocab_size < 1:
            raise ContractError(f"vocab_size must be >= 1, got {self.vocab_size}")
        if self.d_model % self.heads != 0:
            raise ContractError(f"d_model {self.d_model} not divisible by heads {self.heads}")
        if self.directionality not in DIRECTIONALITIES:
            raise ContractError(f"directionality must be one of {DIRECTIONALITIES}")
        if self.mode not in MODES:
            raise ContractError(f"mode must be one of {MODES}")


class TeacherLM:
    """Frozen transformer; parameters never reach any optimizer."""

    def __init__(self, cfg: TeacherConfig, params: dict):
        self.cfg = cfg
        self.params = params  # name -> Tensor
        # indices 1..V are corpus tokens; row 0 is unused (blank never
        # appears in transcripts); the two extra rows are teacher-only
        self.bos_id = cfg.vocab_size + 1
        self.mask_id = cfg.vocab_size + 2

    @property
    def unidirectional(self) -> bool:
        return self.cfg.directionality == "unidirectional"

    def freeze(self):
        for p in self.params.values():
            p.requires_grad = False
            p.grad = None

    def _attn(self, layer: int) -> AttentionParams:
        d_head = self.cfg.d_model // self.cfg.heads
        return AttentionParams(
            wq=self.params[f"L{layer}.attn.wq"],
            wk=self.params[f"L{layer}.attn.wk"],
            wv=self.params[f"L{layer}.attn.wv"],
            wo=self.params[f"L{layer}.attn.wo"],
            heads=self.cfg.heads,
            d_head=d_head,
        )

    def _stack(self, token_ids):
        """Run the transformer; returns (per-layer reps, top state)."""
        n = len(token_ids)
        emb = ad.take_rows(self.params["emb.table"], token_ids)
        reps = [emb]
        # scale embeddings up and positions down so token identity, not
        # the position common mode, dominates the layer inputs; position
        # stays visible enough for the attention to use order
        x = ad.add(
            ad.scale(emb, np.sqrt(self.cfg.d_model)),
            ad.scale(positional_queries(n, self.cfg.d_model), 0.3),
        )
        mask = subsequent_mask(n) if self.unidirectional else None
        for i in range(self.cfg.layers):
            a = mha_cross(x, x, self._attn(i), mask)
            x = ad.layer_norm(ad.add(x, a), self.params[f"L{i}.ln1.g"], self.params[f"L{i}.ln1.b"])
            f = ad.add_rowvec(
                ad.matmul(
                    ad.relu(ad.add_rowvec(ad.matmul(x, self.params[f"L{i}.ffn.w1"]), self.params[f"L{i}.ffn.b1"])),
                    self.params[f"L{i}.ffn.w2"],
                ),
                self.params[f"L{i}.ffn.b2"],
            )
            x = ad.layer_norm(ad.add(x, f), self.params[f"L{i}.ln2.g"], self.params[f"L{i}.ln2.b"])
            reps.append(x)
        return reps, x

    def _check_tokens(self, tokens):
        for y in tokens:
            if y < 1 or y > self.cfg.vocab_size:
                raise ContractError(f"token {y} outside teacher vocabulary [1, {self.cfg.vocab_size}]")

    def _readout(self, states: Tensor) -> Tensor:
        """Logits over real tokens, tied to embedding rows 1..V."""
        table = ad.slice_cols(ad.transpose(self.params["emb.table"]), 1, self.cfg.vocab_size + 1)
        return ad.matmul(states, table)

    def checksum(self) -> int:
        from .checkpoint import fnv1a64, tensor_payload

        return fnv1a64(tensor_payload({k: t.data for k, t in sorted(self.params.items())}))


def build_teacher(vocab_size: int, d_model: int = 64, layers: int = 2, heads: int = 4,
                  directionality: str = "bidirectional", seed: int = 101,
                  ffn_dim: int = 128, mode: str = "random", fit_lr: float = 3e-3) -> TeacherLM:
    """Deterministic seeded teacher; same arguments -> bit-identical params."""
    cfg = TeacherConfig(
        vocab_size=vocab_size, d_model=d_model, layers=layers, heads=heads,
        ffn_dim=ffn_dim, directionality=directionality, mode=mode, seed=seed, fit_lr=fit_lr,
    )
    return build_teacher_from_config(cfg)


def build_teacher_from_config(cfg: TeacherConfig) -> TeacherLM:
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0x7E]))

    def glorot(fan_in, fan_out):
        lim = np.sqrt(6.0 / (fan_in + fan_out))
        return Tensor(rng.uniform(-lim, lim, size=(fan_in, fan_out)), requires_grad=True)

    params = {}
    table_rows = cfg.vocab_size + 3  # 0 unused, 1..V tokens, BOS, MASK
    params["emb.table"] = glorot(table_rows, cfg.d_model)
    for i in range(cfg.layers):
        att = AttentionParams.create(cfg.d_model, cfg.heads, rng)
        params.update(att.named(f"L{i}.attn"))
        params[f"L{i}.ln1.g"] = Tensor(np.ones(cfg.d_model), requires_grad=True)
        params[f"L{i}.ln1.b"] = Tensor(np.zeros(cfg.d_model), requires_grad=True)
        params[f"L{i}.ffn.w1"] = glorot(cfg.d_model, cfg.ffn_dim)
        params[f"L{i}.ffn.b1"] = Tensor(np.zeros(cfg.ffn_dim), requires_grad=True)
        params[f"L{i}.ffn.w2"] = glorot(cfg.ffn_dim, cfg.d_model)
        params[f"L{i}.ffn.b2"] = Tensor(np.zeros(cfg.d_model), requires_grad=True)
        params[f"L{i}.ln2.g"] = Tensor(np.ones(cfg.d_model), requires_grad=True)
        params[f"L{i}.ln2.b"] = Tensor(np.zeros(cfg.d_model), requires_grad=True)
    teacher = TeacherLM(cfg, params)
    teacher.freeze()
    return teacher


def fit_teacher(teacher: TeacherLM, transcripts) -> TeacherLM:
    """The fixed two-epoch seeded fit on corpus transcripts.

    Unidirectional: next-token cross entropy with BOS-shifted inputs.
    Bidirectional: denoising masked-token prediction - a fraction of
    inputs is corrupted (MASK id or a random token) and every position
    predicts its true token, so states stay token-aligned and become
    contextual exactly where the input is ambiguous.
    The teacher is returned frozen.
    """
    transcripts = [tuple(t) for t in transcripts if len(t) > 0]
    if not transcripts:
        raise ContractError("cannot fit a teacher on an empty transcript list")
    for p in teacher.params.values():
        p.requires_grad = True
    state = optim.AdamState(teacher.params)
    rng = np.random.default_rng(np.random.SeedSequence([teacher.cfg.seed, 0x7F]))
    for _ in range(FIT_EPOCHS):
        order = rng.permutation(len(transcripts))
        for idx in order:
            tokens = transcripts[idx]
            if teacher.unidirectional:
                inputs = (teacher.bos_id,) + tokens[:-1]
            else:
                corrupt = rng.uniform(size=len(tokens)) < MASK_PROB
                if not corrupt.any():
                    corrupt[int(rng.integers(0, len(tokens)))] = True
                inputs = []
                for i, y in enumerate(tokens):
                    if corrupt[i]:
                        if rng.uniform() < MASK_TO_RANDOM:
                            inputs.append(int(rng.integers(1, teacher.cfg.vocab_size + 1)))
                        else:
                            inputs.append(teacher.mask_id)
                    else:
                        inputs.append(y)
                inputs = tuple(inputs)
            with ad.new_graph():
                _, top = teacher._stack(inputs)
                logits = teacher._readout(top)
                # tied readout indexes tokens shifted down by one
                loss = losses.cross_entropy(logits, tuple(y - 1 for y in tokens))
                optim.zero_grads(teacher.params)
                ad.backward(loss)
            optim.adam_step(teacher.params, state, teacher.cfg.fit_lr)
    teacher.freeze()
    return teacher


def create_teacher(cfg: TeacherConfig, transcripts=None) -> TeacherLM:
    """Build and, in "fitted" mode, fit-then-freeze a teacher."""
    teacher = build_teacher_from_config(cfg)
    if cfg.mode == "fitted":
        if transcripts is None:
            raise ContractError("fitted teacher mode needs training transcripts")
        fit_teacher(teacher, transcripts)
    return teacher


def teacher_embed(teacher: TeacherLM, tokens, history: bool = False) -> Tensor:
    """Per-position context embeddings, averaged over all layer outputs.

    history=True (unidirectional only) encodes the ground-truth history
    instead: position n sees BOS plus tokens before n, never token n
    itself. Output carries no gradient; the teacher is frozen.
    """
    tokens = tuple(int(y) for y in tokens)
    if not tokens:
        raise ContractError("cannot embed an empty token sequence")
    teacher._check_tokens(tokens)
    if history:
        if not teacher.unidirectional:
            raise ContractError("history embeddings require a unidirectional teacher")
        inputs = (teacher.bos_id,) + tokens[:-1]
    else:
        inputs = tokens
    with ad.no_grad():
        reps, _ = teacher._stack(inputs)
        mean = reps[0]
        for r in reps[1:]:
            mean = ad.add(mean, r)
        mean = ad.scale(mean, 1.0 / len(reps))
    return Tensor(mean.data)


def next_token_logprobs(teacher: TeacherLM, prefix) -> np.ndarray:
    """Log P(next token | prefix) over tokens 1..V, index [token-1]."""
    if not teacher.unidirectional:
        raise ContractError("next-token scoring requires a unidirectional teacher")
    prefix = tuple(int(y) for y in prefix)
    teacher._check_tokens(prefix)
    inputs = (teacher.bos_id,) + prefix
    with ad.no_grad():
        _, top = teacher._stack(inputs)
        logits = teacher._readout(top)
        lp = ad.log_softmax(logits)
    return lp.data[-1].copy()


def next_token_logprob(teacher: TeacherLM, prefix, candidate: int) -> float:
    """Log-probability of one candidate token following the prefix."""
    candidate = int(candidate)
    if candidate < 1 or candidate > teacher.cfg.vocab_size:
        raise ContractError(f"candidate {candidate} outside vocabulary")
    return float(next_token_logprobs(teacher, prefix)[candidate - 1])


_META_FIELDS = ("vocab_size", "d_model", "layers", "heads", "ffn_dim", "seed", "fit_lr")


def teacher_to_arrays(teacher: TeacherLM) -> dict:
    out = {
        "meta.teacher": np.float64(1.0),
        "meta.directionality": np.float64(DIRECTIONALITIES.index(teacher.cfg.directionality)),
        "meta.mode": np.float64(MODES.index(teacher.cfg.mode)),
    }
    for f in _META_FIELDS:
        out[f"meta.{f}"] = np.float64(getattr(teacher.cfg, f))
    for k in sorted(teacher.params):
        out[k] = teacher.params[k].data
    return out


def teacher_from_arrays(arrays: dict) -> TeacherLM:
    from .errors import CheckpointError

    if "meta.teacher" not in arrays:
        raise CheckpointError("checkpoint does not hold a teacher LM")
    try:
        cfg = TeacherConfig(
            vocab_size=int(arrays["meta.vocab_size"]),
            d_model=int(arrays["meta.d_model"]),
            layers=int(arrays["meta.layers"]),
            heads=int(arrays["meta.heads"]),
            ffn_dim=int(arrays["meta.ffn_dim"]),
            directionality=DIRECTIONALITIES[int(arrays["meta.directionality"])],
            mode=MODES[int(arrays["meta.mode"])],
            seed=int(arrays["meta.seed"]),
            fit_lr=float(arrays["meta.fit_lr"]),
        )
    except (KeyError, IndexError) as exc:
        raise CheckpointError(f"teacher checkpoint lacks metadata ({exc})") from exc
    params = {
        k: Tensor(v.copy()) for k, v in arrays.items() if not k.startswith("meta.")
    }
    t = TeacherLM(cfg, params)
    t.freeze()
    return t


class FusionLM:
    """Adapter exposing the beam-search LM interface with caching."""

    def __init__(self, teacher: TeacherLM):
        if not teacher.unidirectional:
            raise ContractError("shallow fusion requires a unidirectional teacher")
        self.teacher = teacher
        self._cache = {}

    def next_token_logprobs(self, prefix):
        key = tuple(prefix)
        out = self._cache.get(key)
        if out is None:
            out = next_token_logprobs(self.teacher, key)
            self._cache[key] = out
        return out
