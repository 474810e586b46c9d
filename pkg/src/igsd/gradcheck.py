"""Central finite-difference gradient checking for the tensor engine."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from . import tensor as tt
from .tensor import Tensor


def numeric_grad(f: Callable[[], float], x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """d f / d x by central differences; ``x`` is perturbed in place and restored."""
    grad = np.zeros_like(x)
    flat, gflat = x.reshape(-1), grad.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        fp = f()
        flat[i] = old - h
        fm = f()
        flat[i] = old
        gflat[i] = (fp - fm) / (2.0 * h)
    return grad


def relative_error(a, b) -> float:
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    denom = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return float(np.linalg.norm(a - b) / denom)


def check_gradients(loss_fn: Callable[[], Tensor], params: Sequence[Tensor],
                    h: float = 1e-5) -> float:
    """Worst relative error between backprop and finite differences over ``params``."""
    for p in params:
        p.grad = None
    with tt.Tape():
        loss = loss_fn()
        tt.backward(loss)
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]

    def value():
        with tt.no_grad():
            return loss_fn().item()

    worst = 0.0
    for p, g in zip(params, analytic):
        worst = max(worst, relative_error(g, numeric_grad(value, p.data, h)))
    return worst
