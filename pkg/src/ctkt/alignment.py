"""Length alignment between frame sequences and token sequences.

Two extractors turn M encoder vectors into N token-level vectors:

* continuous integrate-and-fire: per-frame weights are rescaled to sum
  to N, then integrated left to right; each time the running mass would
  reach 1 the boundary frame's weight is split, a vector fires, and the
  remainder seeds the next one;
* positional cross-attention: sinusoidal queries attend over the frames.

Also provides the masked multi-head cross-attention used elsewhere
(student encoder, teacher stack, joint-classification branch).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import (
    ContractError,
    DegenerateRowError,
    DegenerateWeightsError,
    DimensionError,
    InternalInvariantError,
)

FIRE_SHORTFALL_TOL = 1e-6


@dataclass
class AttentionParams:
    """Projections for one multi-head attention block.

    Head i owns column block [i*d_head, (i+1)*d_head) of wq/wk/wv and
    the matching row block of wo.
    """

    wq: Tensor  # (d_model, heads*d_head)
    wk: Tensor
    wv: Tensor
    wo: Tensor  # (heads*d_head, d_model)
    heads: int
    d_head: int

    @staticmethod
    def create(d_model: int, heads: int, rng, requires_grad: bool = True) -> "AttentionParams":
        if d_model % heads != 0:
            raise ContractError(f"d_model {d_model} not divisible by heads {heads}")
        d_head = d_model // heads

        def glorot(fan_in, fan_out):
            lim = np.sqrt(6.0 / (fan_in + fan_out))
            return Tensor(rng.uniform(-lim, lim, size=(fan_in, fan_out)), requires_grad=requires_grad)

        return AttentionParams(
            wq=glorot(d_model, d_model),
            wk=glorot(d_model, d_model),
            wv=glorot(d_model, d_model),
            wo=glorot(d_model, d_model),
            heads=heads,
            d_head=d_head,
        )

    def named(self, prefix: str) -> dict:
        return {
            f"{prefix}.wq": self.wq,
            f"{prefix}.wk": self.wk,
            f"{prefix}.wv": self.wv,
            f"{prefix}.wo": self.wo,
        }


def cif_weights(h: Tensor, fc_w: Tensor, fc_b: Tensor) -> Tensor:
    """Per-frame weights: sigmoid of the max output of a linear layer.

    Gradient flows only to the winning (lowest-index on ties) element.
    """
    z = ad.add_rowvec(ad.matmul(h, fc_w), fc_b)
    w = ad.sigmoid(ad.tmax(z, axis=1))
    # float64 saturates to exactly 0/1 around |x|>36; keep the open interval
    w.data = np.clip(w.data, np.nextafter(0.0, 1.0), np.nextafter(1.0, 0.0))
    return w


def scale_weights(w: Tensor, n: int) -> Tensor:
    """Rescale weights so their sum is exactly the target length."""
    if n < 1:
        raise ContractError(f"target length must be >= 1, got {n}")
    total = ad.tsum(w)
    if total.item() <= 1e-12:
        raise DegenerateWeightsError("weight mass is numerically zero; cannot rescale")
    return ad.mul(w, ad.div(ad.constant(float(n)), total))


def cif_fire(w_hat: Tensor, h: Tensor, n: int) -> Tensor:
    """Integrate-and-fire aggregation of frames into n vectors.

    Accumulates scaled weights frame by frame. When the running mass
    would reach 1 within a frame, that frame's weight splits: one part
    fills the accumulator to exactly 1 (the vector fires), the rest
    seeds the next accumulation. A final shortfall below
    FIRE_SHORTFALL_TOL force-fires the last vector.
    """
    m_frames = w_hat.data.shape[0]
    if h.data.shape[0] != m_frames:
        raise DimensionError(f"weights cover {m_frames} frames but h has {h.data.shape[0]} rows")
    total = float(w_hat.data.sum())
    if abs(total - n) > FIRE_SHORTFALL_TOL:
        raise ContractError(f"scaled weights sum to {total}, expected {n}")

    d = h.data.shape[1]
    fired = []
    acc = ad.constant(0.0)
    frame = ad.constant(np.zeros(d))
    for m in range(m_frames):
        rem = ad.element(w_hat, m)
        h_m = ad.row(h, m)
        while len(fired) < n and acc.item() + rem.item() >= 1.0:
            need = ad.sub(ad.constant(1.0), acc)
            fired.append(ad.add(frame, ad.mul(need, h_m)))
            rem = ad.sub(rem, need)
            acc = ad.constant(0.0)
            frame = ad.constant(np.zeros(d))
        acc = ad.add(acc, rem)
        frame = ad.add(frame, ad.mul(rem, h_m))
    if len(fired) == n - 1 and 1.0 - acc.item() < FIRE_SHORTFALL_TOL:
        fired.append(frame)
    if len(fired) != n:
        raise InternalInvariantError(f"fired {len(fired)} vectors, expected {n}")
    return ad.stack_rows(fired)


_POSITIONAL_CACHE = {}


def positional_queries(n: int, d_model: int) -> Tensor:
    """Sinusoidal position matrix (n, d_model); deterministic, frozen."""
    if n < 1:
        raise ContractError(f"need at least one position, got {n}")
    if d_model % 2 != 0:
        raise ContractError(f"d_model must be even for interleaved sin/cos, got {d_model}")
    cached = _POSITIONAL_CACHE.get((n, d_model))
    if cached is None:
        pos = np.arange(n, dtype=np.float64)[:, None]
        idx = np.arange(0, d_model, 2, dtype=np.float64)[None, :]
        angle = pos / np.power(10000.0, idx / d_model)
        out = np.zeros((n, d_model))
        out[:, 0::2] = np.sin(angle)
        out[:, 1::2] = np.cos(angle)
        out.setflags(write=False)
        _POSITIONAL_CACHE[(n, d_model)] = out
        cached = out
    return Tensor(cached)


_SUBSEQUENT_CACHE = {}


def subsequent_mask(n: int) -> np.ndarray:
    """Lower-triangular boolean mask; True means "may attend"."""
    if n < 1:
        raise ContractError(f"mask size must be >= 1, got {n}")
    cached = _SUBSEQUENT_CACHE.get(n)
    if cached is None:
        cached = np.tril(np.ones((n, n), dtype=bool))
        cached.setflags(write=False)
        _SUBSEQUENT_CACHE[n] = cached
    return cached


def mha_cross(q_src: Tensor, kv_src: Tensor, params: AttentionParams, mask=None) -> Tensor:
    """Multi-head scaled dot-product cross attention.

    mask (optional, bool Lq x Lk): True = attend, False = forbid. Every
    query row needs at least one allowed key.
    """
    lq = q_src.data.shape[0]
    lk = kv_src.data.shape[0]
    d_model = params.wq.data.shape[0]
    if q_src.data.shape[1] != d_model or kv_src.data.shape[1] != d_model:
        raise DimensionError(
            f"attention inputs {q_src.data.shape}/{kv_src.data.shape} do not match d_model {d_model}"
        )
    bias = None
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != (lq, lk):
            raise DimensionError(f"mask shape {mask.shape} does not match ({lq}, {lk})")
        if not mask.any(axis=1).all():
            raise DegenerateRowError("a query row has every key masked out")
        bias = ad.constant(np.where(mask, 0.0, -np.inf))

    q = ad.matmul(q_src, params.wq)
    k = ad.matmul(kv_src, params.wk)
    v = ad.matmul(kv_src, params.wv)
    inv_sqrt = 1.0 / np.sqrt(params.d_head)
    heads = []
    for i in range(params.heads):
        lo, hi = i * params.d_head, (i + 1) * params.d_head
        scores = ad.scale(ad.matmul(ad.slice_cols(q, lo, hi), ad.transpose(ad.slice_cols(k, lo, hi))), inv_sqrt)
        if bias is not None:
            scores = ad.add(scores, bias)
        heads.append(ad.matmul(ad.softmax(scores), ad.slice_cols(v, lo, hi)))
    return ad.matmul(ad.concat(heads, axis=1), params.wo)


def dump_alignment_csv(path, w_hat_values: np.ndarray, n: int) -> None:
    """Write (n, m, coefficient) rows for one utterance's CIF alignment.

    Runs the fire rule over an identity basis so the fired vectors are
    exactly the per-frame coefficient rows.
    """
    m_frames = w_hat_values.shape[0]
    with ad.no_grad():
        coeff = cif_fire(Tensor(w_hat_values), Tensor(np.eye(m_frames)), n).data
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("n,m,coefficient\n")
        for i in range(n):
            for m in range(m_frames):
                if coeff[i, m] != 0.0:
                    fh.write(f"{i},{m},{float(coeff[i, m])!r}\n")
