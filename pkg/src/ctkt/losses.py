"""Training objectives: distillation targets and multi-task mixing."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ContractError, DegenerateVectorError, DimensionError

AUX_KINDS = ("cosine", "mse")


@dataclass
class LossConfig:
    k: float = 20.0          # cosine loss scale
    lam: float = 0.3         # CTC weight in the representation-learning mix
    beta: float = 0.3        # CTC weight in the classification mix
    aux_kind: str = "cosine"

    def __post_init__(self):
        if self.k <= 0:
            raise ContractError(f"k must be positive, got {self.k}")
        for name, v in (("lam", self.lam), ("beta", self.beta)):
            if not (0.0 < v < 1.0):
                raise ContractError(f"{name} must lie strictly inside (0, 1), got {v}")
        if self.aux_kind not in AUX_KINDS:
            raise ContractError(f"aux_kind must be one of {AUX_KINDS}, got {self.aux_kind!r}")


def _check_same_shape(a: Tensor, b: Tensor):
    if a.data.shape != b.data.shape or a.data.ndim != 2:
        raise DimensionError(f"expected equal (N, d) shapes, got {a.data.shape} and {b.data.shape}")


def cosine_embedding_loss(student: Tensor, target: Tensor, k: float) -> Tensor:
    """k * sum_n (1 - cos(student_n, target_n)); range [0, 2kN]."""
    _check_same_shape(student, target)
    n = student.data.shape[0]
    for name, t in (("student", student), ("target", target)):
        norms = np.sqrt((t.data ** 2).sum(axis=1))
        if np.any(norms <= 1e-12):
            raise DegenerateVectorError(f"{name} row with ~zero norm has no direction")
    dots = ad.tsum(ad.mul(student, target), axis=1)
    ns = ad.sqrt(ad.tsum(ad.mul(student, student), axis=1))
    nt = ad.sqrt(ad.tsum(ad.mul(target, target), axis=1))
    cos = ad.div(dots, ad.mul(ns, nt))
    return ad.scale(ad.sub(ad.constant(float(n)), ad.tsum(cos)), k)


def mse_aux_loss(student: Tensor, target: Tensor) -> Tensor:
    """Mean squared difference over all N*d elements."""
    _check_same_shape(student, target)
    diff = ad.sub(student, target)
    return ad.scale(ad.tsum(ad.mul(diff, diff)), 1.0 / student.data.size)


def cross_entropy(logits: Tensor, target) -> Tensor:
    """Mean over positions of -log softmax(logits)[n, y_n]."""
    target = tuple(int(y) for y in target)
    if logits.data.ndim != 2 or logits.data.shape[0] != len(target):
        raise DimensionError(
            f"logits {logits.data.shape} do not cover {len(target)} target positions"
        )
    vocab = logits.data.shape[1]
    if any(y < 0 or y >= vocab for y in target):
        raise ContractError(f"target token out of range [0, {vocab - 1}]")
    picked = ad.take_index_rows(ad.log_softmax(logits), target)
    return ad.scale(ad.tsum(picked), -1.0 / len(target))


def mtl_combine(l_main: Tensor, l_aux: Tensor, weight: float) -> Tensor:
    """weight * l_main + (1 - weight) * l_aux, weight strictly in (0, 1)."""
    if not (0.0 < weight < 1.0):
        raise ContractError(f"mix weight must lie strictly inside (0, 1), got {weight}")
    return ad.add(ad.scale(l_main, weight), ad.scale(l_aux, 1.0 - weight))
