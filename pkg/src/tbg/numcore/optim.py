"""ADAM with bias correction, as a pure function of (state, params, grad)."""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from ..errors import ContractViolation

__all__ = ["AdamState", "adam_init", "adam_step"]


@dataclass(frozen=True)
class AdamState:
    step: int
    m: np.ndarray
    v: np.ndarray
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def with_lr(self, lr: float) -> "AdamState":
        return replace(self, lr=float(lr))


def adam_init(n: int, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> AdamState:
    return AdamState(0, np.zeros(n), np.zeros(n), lr, beta1, beta2, eps)


def adam_step(state: AdamState, params: np.ndarray, grad: np.ndarray) -> tuple[np.ndarray, AdamState]:
    """One ADAM update; returns new ``(params, state)`` and leaves inputs untouched."""
    params = np.asarray(params, dtype=float)
    grad = np.asarray(grad, dtype=float)
    if not (params.shape == grad.shape == state.m.shape == state.v.shape):
        raise ContractViolation(
            f"length mismatch: params {params.shape}, grad {grad.shape}, state {state.m.shape}"
        )
    step = state.step + 1
    m = state.beta1 * state.m + (1.0 - state.beta1) * grad
    v = state.beta2 * state.v + (1.0 - state.beta2) * grad * grad
    m_hat = m / (1.0 - state.beta1**step)
    v_hat = v / (1.0 - state.beta2**step)
    new = params - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return new, replace(state, step=step, m=m, v=v)
