"""Central finite-difference verification of analytic gradients."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor, backward


class UnreliableCheckError(RuntimeError):
    """The checked function gave different values on repeated evaluation."""


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> np.ndarray:
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    return np.abs(analytic - numeric) / denom


def gradient_check(fn: Callable[[], Tensor], inputs: Sequence[Tensor], eps: float = 1e-5) -> float:
    """Max relative error between backprop and central differences.

    ``fn`` takes no arguments and reads ``inputs`` by closure; each input is
    perturbed in place one coordinate at a time and restored afterwards.
    """
    for t in inputs:
        if t.dtype != np.float64:
            raise TypeError("gradient_check needs float64 inputs")
        if not t.data.flags.c_contiguous:
            raise ValueError("gradient_check needs C-contiguous inputs")
    base = fn()
    if base.data.size != 1:
        raise ValueError("gradient_check: fn must return a scalar")
    again = fn().item()
    if again != base.item():
        raise UnreliableCheckError(
            f"repeated forward passes disagree ({base.item()!r} vs {again!r}); disable dropout/RNG"
        )

    saved = [t.grad for t in inputs]
    for t in inputs:
        t.grad = None
    analytic = [g.copy() for g in backward(base, wrt=inputs)]
    for t, g in zip(inputs, saved):
        t.grad = g

    worst = 0.0
    for t, a in zip(inputs, analytic):
        flat = t.data.reshape(-1)
        numeric = np.empty_like(flat)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            f_plus = fn().item()
            flat[i] = orig - eps
            f_minus = fn().item()
            flat[i] = orig
            numeric[i] = (f_plus - f_minus) / (2.0 * eps)
        if flat.size:
            worst = max(worst, float(relative_error(a.reshape(-1), numeric).max()))
    return worst
