"""Central finite-difference gradients for checking the tape."""

from __future__ import annotations

from typing import Callable

import numpy as np

from .autodiff import Tensor


def numerical_grad(fn: Callable[[], Tensor], param: Tensor, step: float = 1e-5) -> np.ndarray:
    """d fn() / d param by central differences, perturbing ``param.data`` in place."""
    original = param.data
    grad = np.zeros_like(original)
    flat = original.reshape(-1)
    for i in range(flat.size):
        for sign in (1.0, -1.0):
            bumped = flat.copy()
            bumped[i] += sign * step
            bumped = bumped.reshape(original.shape)
            bumped.flags.writeable = False
            param.data = bumped
            grad.reshape(-1)[i] += sign * fn().item()
    param.data = original
    return grad / (2.0 * step)


def analytic_grad(fn: Callable[[], Tensor], params: list[Tensor]) -> list[np.ndarray]:
    for p in params:
        p.grad = None
    fn().backward()
    return [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]


def relative_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-8) -> float:
    """max |a - b| / max(|a|, |b|, floor), taken over the whole array."""
    scale = max(np.max(np.abs(a)), np.max(np.abs(b)), floor)
    return float(np.max(np.abs(a - b)) / scale)


def check_gradients(fn: Callable[[], Tensor], params: list[Tensor], step: float = 1e-5) -> float:
    """Largest relative error between analytic and finite-difference gradients."""
    analytic = analytic_grad(fn, params)
    return max(relative_error(g, numerical_grad(fn, p, step)) for g, p in zip(analytic, params))
