"""Adam with bias correction and the warmup/inverse-sqrt schedule."""

from __future__ import annotations

import numpy as np

from .errors import ContractError

BETA1 = 0.9
BETA2 = 0.98
EPS = 1e-9


class AdamState:
    """First/second moment buffers mirroring a named parameter dict."""

    def __init__(self, params: dict):
        self.m = {k: np.zeros_like(t.data) for k, t in params.items() if t.requires_grad}
        self.v = {k: np.zeros_like(t.data) for k, t in params.items() if t.requires_grad}
        self.step = 0


def adam_step(params: dict, state: AdamState, lr: float) -> None:
    """One bias-corrected update; reads each trainable tensor's .grad."""
    state.step += 1
    t = state.step
    c1 = 1.0 - BETA1 ** t
    c2 = 1.0 - BETA2 ** t
    for name, p in params.items():
        if not p.requires_grad:
            continue
        if p.grad is None:
            raise ContractError(f"parameter {name!r} has no gradient")
        g = p.grad
        m = state.m[name]
        v = state.v[name]
        m *= BETA1
        m += (1.0 - BETA1) * g
        v *= BETA2
        v += (1.0 - BETA2) * (g * g)
        p.data -= lr * (m / c1) / (np.sqrt(v / c2) + EPS)


def zero_grads(params: dict) -> None:
    for p in params.values():
        p.grad = None


def lr_schedule(step: int, base_lr: float, warmup: int) -> float:
    """base_lr * min(step^-0.5, step * warmup^-1.5); peak at step == warmup."""
    if step < 1:
        raise ContractError(f"schedule step must be >= 1, got {step}")
    if warmup < 1:
        raise ContractError(f"warmup must be >= 1, got {warmup}")
    return base_lr * min(step ** -0.5, step * warmup ** -1.5)
