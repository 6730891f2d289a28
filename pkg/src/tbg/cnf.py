"""Continuous normalizing flow on mean-free coordinates.

The state ``x`` (shape ``(B, N, D)``) and its accumulated log-density
change are integrated jointly.  ``delta_logdet`` is ``-int div v dt`` taken
along the direction of integration, so a push-forward and the pull-back
of its endpoint carry opposite values.
"""
from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Protocol

import numpy as np

from .errors import ContractViolation, DomainError
from .numcore.ode import RK4, Solver, rk_integrate

log = logging.getLogger(__name__)

__all__ = [
    "MeanFreePrior", "FlowResult", "VectorField", "LinearField",
    "remove_mean", "sample_rng", "prior_sample", "prior_logprob",
    "push_forward", "pull_back", "model_logprob", "BoltzmannGenerator",
]

MEAN_TOL = 1e-9


def remove_mean(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return x - x.mean(axis=-2, keepdims=True)


def sample_rng(root_seed: int, index: int) -> np.random.Generator:
    """Generator for sample ``index``; independent of batching and workers."""
    return np.random.default_rng(np.random.SeedSequence(int(root_seed), spawn_key=(int(index),)))


@dataclass(frozen=True)
class MeanFreePrior:
    """Isotropic standard normal restricted to zero-centroid configurations."""

    n_atoms: int
    dim: int = 3

    @property
    def dof(self) -> int:
        return self.dim * (self.n_atoms - 1)

    def sample(self, count: int, seed: int, start: int = 0) -> np.ndarray:
        return prior_sample(self, count, seed, start)

    def log_prob(self, x) -> np.ndarray:
        return prior_logprob(self, x)


def prior_sample(prior: MeanFreePrior, count: int, seed: int, start: int = 0) -> np.ndarray:
    """``count`` draws; draw ``k`` depends only on ``(seed, start + k)``."""
    if count < 1:
        raise ContractViolation("count must be at least 1")
    shape = (prior.n_atoms, prior.dim)
    out = np.stack([sample_rng(seed, start + k).standard_normal(shape) for k in range(count)])
    return remove_mean(out)


def _check_mean_free(x: np.ndarray, tol: float = MEAN_TOL) -> np.ndarray:
    offset = np.abs(x.mean(axis=-2)).max()
    if offset > tol:
        raise DomainError(f"configuration is not mean-free (|centroid| = {offset:.3g})")
    return remove_mean(x)


def prior_logprob(prior: MeanFreePrior, x) -> np.ndarray:
    x = _check_mean_free(np.asarray(x, dtype=float))
    if x.shape[-2:] != (prior.n_atoms, prior.dim):
        raise ContractViolation(f"expected (..., {prior.n_atoms}, {prior.dim}), got {x.shape}")
    sq = (x * x).sum(axis=(-1, -2))
    return -0.5 * sq - 0.5 * prior.dof * np.log(2.0 * np.pi)


class VectorField(Protocol):
    def velocity(self, t: float, x: np.ndarray) -> np.ndarray: ...

    def velocity_and_divergence(self, t: float, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]: ...


class LinearField:
    """``v(t, x) = rate * x``; divergence ``rate * D'`` on the mean-free subspace."""

    def __init__(self, rate: float = -1.0):
        self.rate = float(rate)

    def velocity(self, t, x):
        return self.rate * np.asarray(x, dtype=float)

    def velocity_and_divergence(self, t, x):
        x = np.asarray(x, dtype=float)
        n, d = x.shape[-2:]
        div = np.full(x.shape[:-2], self.rate * d * (n - 1))
        return self.rate * x, div


@dataclass
class FlowResult:
    endpoint: np.ndarray
    delta_logdet: np.ndarray
    nfe: int


def _integrate(field: VectorField, x: np.ndarray, t0: float, t1: float, solver: Solver) -> FlowResult:
    x = np.asarray(x, dtype=float)
    single = x.ndim == 2
    xb = x[None] if single else x
    offset = np.abs(xb.mean(axis=1)).max()
    if offset > 0.0:
        if offset > MEAN_TOL:
            log.warning("projected input onto the mean-free subspace (|centroid| = %.3g)", offset)
        xb = remove_mean(xb)
    b, n, d = xb.shape
    z0 = np.concatenate([xb.reshape(b, n * d), np.zeros((b, 1))], axis=1)

    def rhs(t, z):
        v, div = field.velocity_and_divergence(t, z[:, :-1].reshape(b, n, d))
        return np.concatenate([np.asarray(v).reshape(b, n * d), -np.asarray(div).reshape(b, 1)], axis=1)

    z1, nfe = rk_integrate(rhs, z0, t0, t1, solver, return_nfe=True)
    end = z1[:, :-1].reshape(b, n, d)
    ld = z1[:, -1]
    if single:
        return FlowResult(end[0], float(ld[0]), nfe)
    return FlowResult(end, ld, nfe)


def push_forward(field: VectorField, x0, solver: Solver = RK4()) -> FlowResult:
    """Transport prior samples from ``t=0`` to ``t=1``."""
    return _integrate(field, x0, 0.0, 1.0, solver)


def pull_back(field: VectorField, x1, solver: Solver = RK4()) -> FlowResult:
    """Transport data-space samples from ``t=1`` back to ``t=0``."""
    return _integrate(field, x1, 1.0, 0.0, solver)


def model_logprob(field: VectorField, x, solver: Solver = RK4(), prior: MeanFreePrior | None = None):
    """Push-forward log-density at ``x`` (model units)."""
    x = np.asarray(x, dtype=float)
    if prior is None:
        prior = MeanFreePrior(x.shape[-2], x.shape[-1])
    res = pull_back(field, remove_mean(x), solver)
    return prior.log_prob(res.endpoint) - res.delta_logdet


def _sample_chunk(args):
    gen, start, count, seed, with_logprob = args
    return gen._sample_range(start, count, seed, with_logprob)


class BoltzmannGenerator:
    """Flow plus prior plus unit conversion: samples in physical units.

    The flow works in model units ``x_model = length_scale * x``; densities
    are converted with the Jacobian ``length_scale ** D'``.
    """

    def __init__(self, field: VectorField, n_atoms: int, dim: int = 3, length_scale: float = 1.0,
                 solver: Solver = RK4(), chunk: int = 16):
        self.field = field
        self.prior = MeanFreePrior(n_atoms, dim)
        self.length_scale = float(length_scale)
        self.solver = solver
        self.chunk = int(chunk)

    @property
    def log_jacobian(self) -> float:
        return self.prior.dof * np.log(self.length_scale)

    def _sample_range(self, start, count, seed, with_logprob):
        x0 = prior_sample(self.prior, count, seed, start)
        if with_logprob:
            res = push_forward(self.field, x0, self.solver)
            logp = self.prior.log_prob(x0) + res.delta_logdet + self.log_jacobian
            return res.endpoint / self.length_scale, logp
        end = rk_integrate(self.field.velocity, x0, 0.0, 1.0, self.solver)
        return remove_mean(end) / self.length_scale, None

    def sample(self, count: int, seed: int, with_logprob: bool = True, workers: int = 1):
        """``count`` samples and (optionally) their log-densities.

        Work is cut into fixed chunks by sample index, so the output is the
        same for any ``workers``.
        """
        jobs = [
            (self, s, min(self.chunk, count - s), seed, with_logprob)
            for s in range(0, count, self.chunk)
        ]
        if workers > 1:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                parts = list(pool.map(_sample_chunk, jobs))
        else:
            parts = [_sample_chunk(j) for j in jobs]
        x = np.concatenate([p[0] for p in parts])
        logp = np.concatenate([p[1] for p in parts]) if with_logprob else None
        return x, logp

    def log_prob(self, x) -> np.ndarray:
        """Model log-density of physical-unit configurations."""
        xm = remove_mean(np.asarray(x, dtype=float)) * self.length_scale
        out = []
        flat = xm if xm.ndim == 3 else xm[None]
        for s in range(0, len(flat), self.chunk):
            out.append(np.atleast_1d(model_logprob(self.field, flat[s : s + self.chunk], self.solver, self.prior)))
        lp = np.concatenate(out) + self.log_jacobian
        return lp if xm.ndim == 3 else float(lp[0])
