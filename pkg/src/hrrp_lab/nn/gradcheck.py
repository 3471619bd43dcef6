"""Central finite differences against the analytic gradients."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor


def grad_check(loss_fn: Callable[[], Tensor], inputs: Sequence[Tensor], h: float = 1e-5,
               max_entries: int | None = None, rng: np.random.Generator | None = None,
               floor: float = 1e-6) -> float:
    """Max relative error between analytic and numerical gradients.

    ``loss_fn`` rebuilds the scalar loss from the current values of
    ``inputs``. The error of each tensor is ``|g_a - g_n| / max(|g_a|, |g_n|)``
    in the 2-norm, so near-zero entries do not dominate. The denominator is
    at least ``floor``: a bias feeding straight into batch norm has a true
    gradient of zero, and the difference quotient there is pure round-off.
    ``max_entries`` limits how many randomly chosen coordinates per tensor
    are perturbed.
    """
    for t in inputs:
        t.grad = None
    loss = loss_fn()
    loss.backward()
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in inputs]
    rng = rng or np.random.default_rng(0)
    worst = 0.0
    for t, ga in zip(inputs, analytic):
        flat = t.data.reshape(-1)
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            idx = np.sort(rng.choice(flat.size, size=max_entries, replace=False))
        gn = np.empty(len(idx))
        for j, i in enumerate(idx):
            orig = flat[i]
            flat[i] = orig + h
            fp = float(loss_fn().data)
            flat[i] = orig - h
            fm = float(loss_fn().data)
            flat[i] = orig
            gn[j] = (fp - fm) / (2 * h)
        ga_sel = ga.reshape(-1)[idx]
        scale = max(np.linalg.norm(ga_sel), np.linalg.norm(gn), floor)
        worst = max(worst, float(np.linalg.norm(ga_sel - gn) / scale))
    for t in inputs:
        t.grad = None
    return worst
