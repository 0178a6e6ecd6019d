"""Central finite-difference verification of analytic gradients."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from ..prng import SplitMix64
from .tensor import Graph, Tensor, backward


def check_gradients(
    f: Callable[[], Tensor],
    params: Sequence[Tensor],
    h: float = 1e-5,
    max_checks_per_param: int | None = None,
    seed: int = 0,
) -> float:
    """Max relative error between analytic and numeric gradients of f.

    f must be a deterministic zero-argument callable that runs the forward
    pass from current parameter values and returns a scalar loss Tensor. The
    analytic gradient comes from one taped forward/backward; the numeric one
    from central differences (f(p+h) - f(p-h)) / 2h, evaluated untaped. The
    relative error uses denominator max(|analytic|, |numeric|, 1e-8).

    With max_checks_per_param set, each parameter tensor contributes at most
    that many elements, chosen by a seeded stream (for big parameter sets).
    """
    for p in params:
        p.grad = None
    with Graph() as graph:
        loss = f()
    backward(loss, graph)
    analytic = [
        np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params
    ]

    picker = SplitMix64(seed)
    worst = 0.0
    for p, reference in zip(params, analytic):
        flat = p.data.reshape(-1)
        ref_flat = reference.reshape(-1)
        if max_checks_per_param is not None and flat.size > max_checks_per_param:
            indices = sorted({picker.randint(flat.size) for _ in range(max_checks_per_param)})
        else:
            indices = range(flat.size)
        for i in indices:
            original = flat[i]
            flat[i] = original + h
            loss_plus = f().item()
            flat[i] = original - h
            loss_minus = f().item()
            flat[i] = original
            numeric = (loss_plus - loss_minus) / (2.0 * h)
            denom = max(abs(numeric), abs(ref_flat[i]), 1e-8)
            worst = max(worst, abs(numeric - ref_flat[i]) / denom)
    return worst
