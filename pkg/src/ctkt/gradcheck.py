"""Central finite-difference gradient checking.

The oracle only ever calls the forward function; it never consults the
tape, so it stays independent of the reverse-mode path it verifies.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad


def finite_difference(forward, tensors, eps: float = 1e-4, coords=None):
    """Central differences of a scalar-valued `forward` w.r.t. `tensors`.

    forward: callable() -> float, reading the current tensor values.
    tensors: list of Tensors whose entries get perturbed in place.
    coords: optional {tensor_index: [flat indices]} restricting which
        entries are probed (all entries by default).
    Returns a list of dicts {flat_index: derivative}.
    """
    grads = []
    for ti, t in enumerate(tensors):
        flat = t.data.reshape(-1)
        if coords is None:
            probe = range(flat.size)
        else:
            probe = coords.get(ti, range(flat.size))
        g = {}
        for i in probe:
            keep = flat[i]
            flat[i] = keep + eps
            up = forward()
            flat[i] = keep - eps
            down = forward()
            flat[i] = keep
            g[i] = (up - down) / (2.0 * eps)
        grads.append(g)
    return grads


def rel_err(a: float, b: float) -> float:
    return abs(a - b) / max(1.0, abs(a), abs(b))


def check_gradients(build_loss, tensors, eps: float = 1e-4, tol: float = 1e-4,
                    max_coords_per_tensor=None, rng=None):
    """Compare backward() grads of build_loss() against finite differences.

    build_loss: callable() -> scalar Tensor, computed from `tensors`.
    Returns (max_rel_err, n_checked). Raises nothing; caller asserts.
    """
    with ad.new_graph():
        loss = build_loss()
        for t in tensors:
            t.zero_grad()
        ad.backward(loss)
    analytic = [None if t.grad is None else t.grad.reshape(-1).copy() for t in tensors]

    coords = None
    if max_coords_per_tensor is not None:
        rng = rng or np.random.default_rng(0)
        coords = {}
        for ti, t in enumerate(tensors):
            n = t.data.size
            if n <= max_coords_per_tensor:
                coords[ti] = list(range(n))
            else:
                coords[ti] = sorted(rng.choice(n, size=max_coords_per_tensor, replace=False).tolist())

    def forward():
        with ad.no_grad():
            return build_loss().item()

    numeric = finite_difference(forward, tensors, eps=eps, coords=coords)

    worst = 0.0
    checked = 0
    for ti, g in enumerate(numeric):
        a = analytic[ti]
        for i, fd in g.items():
            av = 0.0 if a is None else float(a[i])
            worst = max(worst, rel_err(av, fd))
            checked += 1
    return worst, checked
