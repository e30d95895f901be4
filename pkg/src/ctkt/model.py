"""ASR variants over a small trainable transformer encoder.

All variants share encoder + CTC classifier; the knowledge-transfer
heads exist only at training time:

* vanilla      : CTC loss alone;
* kt-rl-cif    : integrate-and-fire alignment -> cosine/MSE pull toward
                 frozen teacher embeddings of the transcript;
* kt-rl-att    : positional cross-attention alignment, same target;
* kt-cl        : teacher embeddings of the ground-truth history query
                 the encoder output; a classifier predicts each token
                 (cross entropy), jointly with CTC.

Inference always uses the CTC branch only; kt-cl additionally exposes a
sequence scorer for joint rescoring.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import alignment as al
from . import ctc as ctc_mod
from . import losses as loss_mod
from . import teacher as tch
from .autodiff import Tensor
from .errors import CheckpointError, ContractError

VARIANTS = ("vanilla", "kt-rl-cif", "kt-rl-att", "kt-cl")


@dataclass
class ModelConfig:
    vocab_size: int           # corpus tokens, excluding blank
    d_in: int
    d_model: int = 64
    layers: int = 2
    heads: int = 4
    ffn_dim: int = 128
    dropout: float = 0.1
    variant: str = "vanilla"

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ContractError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.d_model % self.heads != 0:
            raise ContractError(f"d_model {self.d_model} not divisible by heads {self.heads}")
        if not (0.0 <= self.dropout < 1.0):
            raise ContractError(f"dropout must lie in [0, 1), got {self.dropout}")

    @property
    def n_classes(self) -> int:
        return self.vocab_size + 1  # blank at index 0


_META_FIELDS = ("vocab_size", "d_in", "d_model", "layers", "heads", "ffn_dim", "dropout")


class ModelParams:
    """Named, shaped parameter set for one ASR variant."""

    def __init__(self, cfg: ModelConfig, params: dict):
        self.cfg = cfg
        self.params = params

    @staticmethod
    def build(cfg: ModelConfig, seed: int) -> "ModelParams":
        rng = np.random.default_rng(np.random.SeedSequence([seed, 0x51]))

        def glorot(fan_in, fan_out):
            lim = np.sqrt(6.0 / (fan_in + fan_out))
            return Tensor(rng.uniform(-lim, lim, size=(fan_in, fan_out)), requires_grad=True)

        def zeros(n):
            return Tensor(np.zeros(n), requires_grad=True)

        def ones(n):
            return Tensor(np.ones(n), requires_grad=True)

        p = {}
        p["enc.in.w"] = glorot(cfg.d_in, cfg.d_model)
        p["enc.in.b"] = zeros(cfg.d_model)
        for i in range(cfg.layers):
            p.update(al.AttentionParams.create(cfg.d_model, cfg.heads, rng).named(f"enc.L{i}.attn"))
            p[f"enc.L{i}.ln1.g"] = ones(cfg.d_model)
            p[f"enc.L{i}.ln1.b"] = zeros(cfg.d_model)
            p[f"enc.L{i}.ffn.w1"] = glorot(cfg.d_model, cfg.ffn_dim)
            p[f"enc.L{i}.ffn.b1"] = zeros(cfg.ffn_dim)
            p[f"enc.L{i}.ffn.w2"] = glorot(cfg.ffn_dim, cfg.d_model)
            p[f"enc.L{i}.ffn.b2"] = zeros(cfg.d_model)
            p[f"enc.L{i}.ln2.g"] = ones(cfg.d_model)
            p[f"enc.L{i}.ln2.b"] = zeros(cfg.d_model)
        p["ctc.fc.w"] = glorot(cfg.d_model, cfg.n_classes)
        p["ctc.fc.b"] = zeros(cfg.n_classes)
        if cfg.variant == "kt-rl-cif":
            # same output width as the CTC classifier, but separate weights
            p["cif.fc.w"] = glorot(cfg.d_model, cfg.n_classes)
            p["cif.fc.b"] = zeros(cfg.n_classes)
        if cfg.variant in ("kt-rl-att", "kt-cl"):
            p.update(al.AttentionParams.create(cfg.d_model, cfg.heads, rng).named("align.attn"))
        if cfg.variant == "kt-cl":
            p["ktcl.fc.w"] = glorot(cfg.d_model, cfg.n_classes)
            p["ktcl.fc.b"] = zeros(cfg.n_classes)
        return ModelParams(cfg, p)

    # --- serialization ---------------------------------------------------

    def to_arrays(self) -> dict:
        out = {"meta.variant": np.float64(VARIANTS.index(self.cfg.variant))}
        for f in _META_FIELDS:
            out[f"meta.{f}"] = np.float64(getattr(self.cfg, f))
        for k in sorted(self.params):
            out[k] = self.params[k].data
        return out

    @staticmethod
    def from_arrays(arrays: dict) -> "ModelParams":
        try:
            kw = {f: float(arrays[f"meta.{f}"]) for f in _META_FIELDS}
            variant = VARIANTS[int(arrays["meta.variant"])]
        except (KeyError, IndexError) as exc:
            raise CheckpointError(f"checkpoint lacks model metadata ({exc})") from exc
        cfg = ModelConfig(
            vocab_size=int(kw["vocab_size"]), d_in=int(kw["d_in"]), d_model=int(kw["d_model"]),
            layers=int(kw["layers"]), heads=int(kw["heads"]), ffn_dim=int(kw["ffn_dim"]),
            dropout=kw["dropout"], variant=variant,
        )
        params = {
            k: Tensor(v.copy(), requires_grad=True)
            for k, v in arrays.items()
            if not k.startswith("meta.")
        }
        return ModelParams(cfg, params)

    def clone_arrays(self) -> dict:
        return {k: t.data.copy() for k, t in self.params.items()}

    def load_arrays(self, arrays: dict) -> None:
        for k, t in self.params.items():
            t.data[:] = arrays[k]

    def checksum(self) -> int:
        from .checkpoint import fnv1a64, tensor_payload

        return fnv1a64(tensor_payload(self.to_arrays()))

    def _attn(self, prefix: str) -> al.AttentionParams:
        return al.AttentionParams(
            wq=self.params[f"{prefix}.wq"],
            wk=self.params[f"{prefix}.wk"],
            wv=self.params[f"{prefix}.wv"],
            wo=self.params[f"{prefix}.wo"],
            heads=self.cfg.heads,
            d_head=self.cfg.d_model // self.cfg.heads,
        )


def _dropout(x: Tensor, p: float, rng) -> Tensor:
    if rng is None or p <= 0.0:
        return x
    mask = (rng.uniform(size=x.data.shape) >= p) / (1.0 - p)
    return ad.mul(x, ad.constant(mask))


def encode(mp: ModelParams, frames: np.ndarray, drop_rng=None) -> Tensor:
    """Frame matrix (M, d_in) -> encoder states (M, d_model)."""
    cfg = mp.cfg
    p = mp.params
    x = ad.add_rowvec(ad.matmul(ad.constant(frames), p["enc.in.w"]), p["enc.in.b"])
    x = ad.add(x, ad.scale(al.positional_queries(frames.shape[0], cfg.d_model), 0.3))
    for i in range(cfg.layers):
        a = al.mha_cross(x, x, mp._attn(f"enc.L{i}.attn"))
        a = _dropout(a, cfg.dropout, drop_rng)
        x = ad.layer_norm(ad.add(x, a), p[f"enc.L{i}.ln1.g"], p[f"enc.L{i}.ln1.b"])
        f = ad.add_rowvec(
            ad.matmul(
                ad.relu(ad.add_rowvec(ad.matmul(x, p[f"enc.L{i}.ffn.w1"]), p[f"enc.L{i}.ffn.b1"])),
                p[f"enc.L{i}.ffn.w2"],
            ),
            p[f"enc.L{i}.ffn.b2"],
        )
        f = _dropout(f, cfg.dropout, drop_rng)
        x = ad.layer_norm(ad.add(x, f), p[f"enc.L{i}.ln2.g"], p[f"enc.L{i}.ln2.b"])
    return x


def ctc_log_probs(mp: ModelParams, h: Tensor) -> Tensor:
    return ad.log_softmax(ad.add_rowvec(ad.matmul(h, mp.params["ctc.fc.w"]), mp.params["ctc.fc.b"]))


@dataclass
class LossReport:
    """Per-utterance scalar losses; `loss` is the differentiable root."""

    variant: str
    l_ctc: float
    l_mtl: float
    l_aux: float | None = None
    l_ce: float | None = None
    loss: Tensor | None = field(default=None, repr=False)


def _teacher_targets(mp, utt, teacher, embed_cache):
    if embed_cache is not None and utt.id in embed_cache:
        return embed_cache[utt.id]
    if mp.cfg.variant == "kt-cl":
        emb = tch.teacher_embed(teacher, utt.transcript, history=True)
    else:
        emb = tch.teacher_embed(teacher, utt.transcript)
    if embed_cache is not None:
        embed_cache[utt.id] = emb
    return emb


def forward_variant(mp: ModelParams, utt, teacher=None, loss_cfg=None,
                    drop_rng=None, embed_cache=None) -> LossReport:
    """Build the training loss for one utterance under `mp.cfg.variant`.

    Teacher inputs are always the ground-truth transcript. kt-cl
    requires a unidirectional teacher (its history queries must not see
    future tokens); kt-rl-* accepts either directionality.
    """
    cfg = mp.cfg
    loss_cfg = loss_cfg or loss_mod.LossConfig()
    if cfg.variant != "vanilla":
        if teacher is None:
            raise ContractError(f"variant {cfg.variant} needs a teacher LM")
        if cfg.variant == "kt-cl" and not teacher.unidirectional:
            raise ContractError("kt-cl requires a unidirectional teacher")
        if teacher.cfg.d_model != cfg.d_model:
            raise ContractError(
                f"teacher d_model {teacher.cfg.d_model} != student d_model {cfg.d_model}"
            )
        if len(utt.transcript) < 1:
            raise ContractError("knowledge-transfer variants need a nonempty transcript")

    h = encode(mp, utt.frames, drop_rng=drop_rng)
    logp = ctc_log_probs(mp, h)
    l_ctc = ctc_mod.ctc_loss(logp, utt.transcript)

    if cfg.variant == "vanilla":
        return LossReport("vanilla", l_ctc.item(), l_ctc.item(), loss=l_ctc)

    n = len(utt.transcript)
    if cfg.variant in ("kt-rl-cif", "kt-rl-att"):
        target = _teacher_targets(mp, utt, teacher, embed_cache)
        if cfg.variant == "kt-rl-cif":
            w = al.cif_weights(h, mp.params["cif.fc.w"], mp.params["cif.fc.b"])
            w_hat = al.scale_weights(w, n)
            rep = al.cif_fire(w_hat, h, n)
        else:
            queries = al.positional_queries(n, cfg.d_model)
            rep = al.mha_cross(queries, h, mp._attn("align.attn"))
        if loss_cfg.aux_kind == "cosine":
            aux = loss_mod.cosine_embedding_loss(rep, target, loss_cfg.k)
        else:
            aux = loss_mod.mse_aux_loss(rep, target)
        total = loss_mod.mtl_combine(l_ctc, aux, loss_cfg.lam)
        return LossReport(cfg.variant, l_ctc.item(), total.item(), l_aux=aux.item(), loss=total)

    # kt-cl
    g = _teacher_targets(mp, utt, teacher, embed_cache)
    out = al.mha_cross(g, h, mp._attn("align.attn"))
    logits = ad.add_rowvec(ad.matmul(out, mp.params["ktcl.fc.w"]), mp.params["ktcl.fc.b"])
    l_ce = loss_mod.cross_entropy(logits, utt.transcript)
    total = loss_mod.mtl_combine(l_ctc, l_ce, loss_cfg.beta)
    return LossReport("kt-cl", l_ctc.item(), total.item(), l_ce=l_ce.item(), loss=total)


def ktcl_positional_logits(mp: ModelParams, h: Tensor, teacher, tokens) -> Tensor:
    """Classifier logits for each position of a candidate transcript."""
    if mp.cfg.variant != "kt-cl":
        raise ContractError(f"joint scoring needs kt-cl heads, model is {mp.cfg.variant!r}")
    g = tch.teacher_embed(teacher, tokens, history=True)
    out = al.mha_cross(g, h, mp._attn("align.attn"))
    return ad.add_rowvec(ad.matmul(out, mp.params["ktcl.fc.w"]), mp.params["ktcl.fc.b"])


def ktcl_sequence_score(mp: ModelParams, h: Tensor, teacher, tokens) -> float:
    """log P(tokens) under the kt-cl classifier branch (sum over positions)."""
    tokens = tuple(int(y) for y in tokens)
    if not tokens:
        return 0.0
    with ad.no_grad():
        logits = ktcl_positional_logits(mp, h, teacher, tokens)
        lp = ad.log_softmax(logits)
    return float(lp.data[np.arange(len(tokens)), list(tokens)].sum())
