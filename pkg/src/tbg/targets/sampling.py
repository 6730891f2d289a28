"""Reference samples: exact draws when a target has a sampler, otherwise a
vectorised Metropolis chain ensemble.

Molecular targets use two symmetric proposals, a Gaussian displacement of
one random atom and a rigid rotation of one side of a rotatable bond (a
pivot move, uniform angle), so torsional barriers are crossed in one step.
Step widths adapt toward ``target_accept`` during burn-in only and are
frozen afterwards, which keeps the production chain reversible.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ContractViolation, ConvergenceError
from .base import BoltzmannTarget

__all__ = ["McmcConfig", "McmcStats", "metropolis", "reference_sampler", "rotate_about_bond"]


@dataclass(frozen=True)
class McmcConfig:
    n_chains: int = 32
    burn_in: int = 2000
    thin: int = 10
    step: float = 0.005
    target_accept: float = 0.35
    adapt_every: int = 50
    pivot_fraction: float = 0.2
    init_noise: float = 1e-3
    accept_bounds: tuple = (0.2, 0.6)


@dataclass
class McmcStats:
    acceptance: dict = field(default_factory=dict)
    step: float = 0.0
    n_steps: int = 0
    n_chains: int = 0


def rotate_about_bond(x: np.ndarray, j: int, k: int, moving: np.ndarray, angle: np.ndarray) -> np.ndarray:
    """Rotate atoms ``moving`` of every configuration about the ``j -> k`` axis."""
    axis = x[:, k] - x[:, j]
    axis = axis / np.linalg.norm(axis, axis=-1, keepdims=True)
    p = x[:, moving] - x[:, k][:, None]
    c = np.cos(angle)[:, None, None]
    s = np.sin(angle)[:, None, None]
    a = axis[:, None, :]
    rot = p * c + np.cross(a, p) * s + a * (p * a).sum(-1, keepdims=True) * (1.0 - c)
    out = x.copy()
    out[:, moving] = rot + x[:, k][:, None]
    return out


def metropolis(target: BoltzmannTarget, count: int, seed: int, config: McmcConfig = McmcConfig(),
               return_chains: bool = False):
    """``count`` frames (chain-major order) and the chain statistics."""
    if count < 1:
        raise ContractViolation("count must be at least 1")
    rng = np.random.default_rng(seed)
    c = config.n_chains
    molecular = len(target.event_shape) == 2
    pivots = getattr(target, "rotatable", ()) if molecular else ()
    x = np.broadcast_to(target.initial_state(), (c,) + tuple(target.event_shape)).copy()
    x = x + config.init_noise * rng.standard_normal(x.shape)
    u = target.energy(x)
    step = config.step
    per_chain = -(-count // c)
    total = config.burn_in + per_chain * config.thin
    frames = np.empty((per_chain, c) + tuple(target.event_shape))
    acc = {"displace": [0, 0], "pivot": [0, 0]}
    window = [0, 0]
    n_adapt = 0
    for it in range(total):
        production = it >= config.burn_in
        if pivots and rng.uniform() < config.pivot_fraction:
            kind = "pivot"
            which = rng.integers(len(pivots), size=c)
            y = x
            ang = rng.uniform(-np.pi, np.pi, size=c)
            for b, (j, k, moving) in enumerate(pivots):
                sel = which == b
                if sel.any():
                    y = y.copy() if y is x else y
                    y[sel] = rotate_about_bond(x[sel], j, k, moving, ang[sel])
        else:
            kind = "displace"
            y = x.copy()
            if molecular:
                atom = rng.integers(target.event_shape[0], size=c)
                y[np.arange(c), atom] += step * rng.standard_normal((c, target.event_shape[1]))
            else:
                y += step * rng.standard_normal(y.shape)
        uy = target.energy(y)
        with np.errstate(over="ignore"):
            accept = np.log(rng.uniform(size=c)) < (u - uy)
        x = np.where(accept.reshape((c,) + (1,) * len(target.event_shape)), y, x)
        u = np.where(accept, uy, u)
        if production:
            acc[kind][0] += int(accept.sum())
            acc[kind][1] += c
        elif kind == "displace":
            window[0] += int(accept.sum())
            window[1] += c
            if window[1] >= config.adapt_every * c:
                n_adapt += 1
                rate = window[0] / window[1]
                step *= np.exp((rate - config.target_accept) / np.sqrt(n_adapt))
                window = [0, 0]
        if production and (it - config.burn_in + 1) % config.thin == 0:
            frames[(it - config.burn_in) // config.thin] = x
    rates = {k: (a / n if n else float("nan")) for k, (a, n) in acc.items()}
    stats = McmcStats(rates, float(step), total, c)
    lo, hi = config.accept_bounds
    if not lo <= rates["displace"] <= hi:
        raise ConvergenceError(
            f"{target.name}: displacement acceptance {rates['displace']:.3f} outside [{lo}, {hi}] "
            f"after adaptation (step {step:.3g}, burn-in {config.burn_in})"
        )
    chains = np.swapaxes(frames, 0, 1)
    if return_chains:
        return chains, stats
    return chains.reshape((-1,) + tuple(target.event_shape))[:count], stats


def reference_sampler(target: BoltzmannTarget, count: int, seed: int, config: McmcConfig | None = None,
                      return_stats: bool = False):
    """Exact i.i.d. samples where possible, Metropolis otherwise."""
    if count < 1:
        raise ContractViolation("count must be at least 1")
    if target.has_exact_sampler and config is None:
        out = target.exact_sample(count, np.random.default_rng(seed))
        return (out, None) if return_stats else out
    out, stats = metropolis(target, count, seed, config or McmcConfig())
    return (out, stats) if return_stats else out
