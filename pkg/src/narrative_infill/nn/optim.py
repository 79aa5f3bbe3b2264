"""Adam with bias correction, plus global-norm gradient clipping."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .tensor import Tensor

# Norms within this relative margin of max_norm are left alone, which makes
# clipping exactly idempotent (a rescaled vector can round to max_norm + ulp).
_CLIP_SLACK = 1e-12


def global_norm(grads: Sequence[np.ndarray]) -> float:
    return float(np.sqrt(sum(float(np.sum(np.square(g, dtype=np.float64))) for g in grads)))


def clip_gradients(grads: Sequence[np.ndarray], max_norm: float = 10.0) -> tuple[list[np.ndarray], float]:
    """Scale ``grads`` jointly so their global L2 norm is at most ``max_norm``.

    Returns the (possibly scaled) gradients and the pre-clip norm.
    """
    norm = global_norm(grads)
    if norm > max_norm * (1.0 + _CLIP_SLACK):
        scale = max_norm / norm
        return [g * np.asarray(scale, dtype=g.dtype) for g in grads], norm
    return [g for g in grads], norm


@dataclass
class OptimizerState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0
    lr: float = 4e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params: Sequence[Tensor], **hyper) -> "OptimizerState":
        return cls(
            m=[np.zeros_like(p.data) for p in params],
            v=[np.zeros_like(p.data) for p in params],
            **hyper,
        )


def adam_step(params: Sequence[Tensor], grads: Sequence[np.ndarray], state: OptimizerState) -> None:
    """One in-place Adam update of ``params``; increments ``state.t``."""
    if not (len(params) == len(grads) == len(state.m)):
        raise ValueError("adam_step: params, grads and optimizer state differ in length")
    state.t += 1
    bc1 = 1.0 - state.beta1 ** state.t
    bc2 = 1.0 - state.beta2 ** state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if g.shape != p.shape or m.shape != p.shape:
            raise ValueError(f"adam_step: gradient {g.shape} does not match parameter {p.shape}")
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        m_hat = m / bc1
        v_hat = v / bc2
        p.data -= (state.lr * m_hat / (np.sqrt(v_hat) + state.eps)).astype(p.dtype, copy=False)


@dataclass
class Adam:
    """Convenience wrapper bundling parameters, state and clipping."""

    params: list[Tensor]
    lr: float = 4e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    clip: float | None = 10.0
    state: OptimizerState = field(init=False)

    def __post_init__(self):
        self.state = OptimizerState.for_params(
            self.params, lr=self.lr, beta1=self.beta1, beta2=self.beta2, eps=self.eps
        )

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> float:
        grads = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in self.params]
        if self.clip is not None:
            grads, norm = clip_gradients(grads, self.clip)
        else:
            norm = global_norm(grads)
        adam_step(self.params, grads, self.state)
        return norm
