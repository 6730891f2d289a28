"""Explicit Runge-Kutta integration of ``dx/dt = v(t, x)``.

Fixed-step classical RK4 is the default everywhere a log-density is
accumulated: it is deterministic and runs backwards by negating the step.
The adaptive Dormand-Prince 5(4) pair is offered for sampling without
likelihoods.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Union

import numpy as np

from ..errors import ContractViolation, DivergedIntegration

__all__ = ["RK4", "DormandPrince", "rk_integrate", "Solver"]


@dataclass(frozen=True)
class RK4:
    steps: int = 100


@dataclass(frozen=True)
class DormandPrince:
    rtol: float = 1e-5
    atol: float = 1e-6
    h0: float | None = None
    max_steps: int = 10_000


Solver = Union[RK4, DormandPrince]


@dataclass
class _Counter:
    nfe: int = 0


def _check(x, t, last):
    if not np.all(np.isfinite(x)):
        raise DivergedIntegration(f"non-finite state at t={t:.6g}", t=t, last_state=last)


def _rk4(v, x, t0, t1, steps, counter):
    if steps < 1:
        raise ContractViolation("RK4 needs at least one step")
    h = (t1 - t0) / steps
    for k in range(steps):
        t = t0 + k * h
        k1 = v(t, x)
        k2 = v(t + 0.5 * h, x + (0.5 * h) * k1)
        k3 = v(t + 0.5 * h, x + (0.5 * h) * k2)
        k4 = v(t + h, x + h * k3)
        counter.nfe += 4
        x_new = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        _check(x_new, t + h, x)
        x = x_new
    return x


# Dormand-Prince 5(4) tableau
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_B5 = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_B4 = np.array([5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40])


def _dopri(v, x, t0, t1, cfg: DormandPrince, counter):
    span = t1 - t0
    if span == 0.0:
        return x
    direction = np.sign(span)
    h = cfg.h0 if cfg.h0 is not None else 0.01 * abs(span)
    t = t0
    k_first = v(t, x)
    counter.nfe += 1
    for _ in range(cfg.max_steps):
        if (t1 - t) * direction <= 0:
            return x
        h = min(h, abs(t1 - t))
        hs = direction * h
        ks = [k_first]
        for i in range(1, 7):
            xi = x + hs * sum(a * kk for a, kk in zip(_A[i], ks))
            ks.append(v(t + _C[i] * hs, xi))
        counter.nfe += 6
        x5 = x + hs * sum(b * kk for b, kk in zip(_B5, ks))
        err_vec = hs * sum((b5 - b4) * kk for b5, b4, kk in zip(_B5, _B4, ks))
        scale = cfg.atol + cfg.rtol * np.maximum(np.abs(x), np.abs(x5))
        err = float(np.sqrt(np.mean((err_vec / scale) ** 2)))
        if not np.isfinite(err):
            raise DivergedIntegration(f"non-finite state at t={t:.6g}", t=t, last_state=x)
        if err <= 1.0:
            t = t + hs
            x = x5
            k_first = ks[-1]  # FSAL
        factor = 0.9 * (1.0 / max(err, 1e-10)) ** 0.2
        h = h * min(5.0, max(0.2, factor))
    raise DivergedIntegration("step budget exhausted", t=t, last_state=x)


def rk_integrate(
    v: Callable[[float, np.ndarray], np.ndarray],
    x0: np.ndarray,
    t0: float,
    t1: float,
    solver: Solver = RK4(),
    return_nfe: bool = False,
):
    """Integrate from ``t0`` to ``t1`` (either direction).

    Raises :class:`DivergedIntegration` with the time stamp of the first
    non-finite state.
    """
    x = np.array(x0, dtype=float)
    counter = _Counter()
    if isinstance(solver, RK4):
        out = _rk4(v, x, float(t0), float(t1), solver.steps, counter)
    elif isinstance(solver, DormandPrince):
        out = _dopri(v, x, float(t0), float(t1), solver, counter)
    else:
        raise ContractViolation(f"unknown solver {solver!r}")
    return (out, counter.nfe) if return_nfe else out
