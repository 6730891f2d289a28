"""Boltzmann targets ``mu(x) ~ exp(-U(x))`` with ``U`` in units of k_B T."""
from __future__ import annotations

import numpy as np

from ..errors import ContractViolation
from ..numcore import value_and_grad

__all__ = ["BoltzmannTarget", "DEFAULT_CAP"]

DEFAULT_CAP = 1e6


class BoltzmannTarget:
    """Base class.

    Subclasses implement :meth:`potential` with :mod:`tbg.numcore.ops`
    (so it records on a tape) in units of k_B T at the reference
    temperature.  ``temperature`` is relative to that reference; the
    reduced energy is ``potential / temperature``, saturated at ``cap``.

    ``event_shape`` is the shape of one configuration: ``(D,)`` for flat
    targets, ``(N, 3)`` (or ``(N, dim)``) for molecular ones.
    """

    name = "target"
    event_shape: tuple = ()
    topology = None

    def __init__(self, temperature: float = 1.0, cap: float = DEFAULT_CAP):
        if temperature <= 0:
            raise ContractViolation("temperature must be positive")
        self.temperature = float(temperature)
        self.cap = float(cap)

    # to be provided ---------------------------------------------------
    def potential(self, x):
        raise NotImplementedError

    def exact_sample(self, count: int, rng: np.random.Generator) -> np.ndarray:
        raise NotImplementedError(f"{self.name} has no exact sampler")

    @property
    def has_exact_sampler(self) -> bool:
        return type(self).exact_sample is not BoltzmannTarget.exact_sample

    def initial_state(self) -> np.ndarray:
        return np.zeros(self.event_shape)

    # derived ----------------------------------------------------------
    def _check(self, x):
        x = np.asarray(x, dtype=float)
        k = len(self.event_shape)
        if x.shape[x.ndim - k :] != tuple(self.event_shape):
            raise ContractViolation(f"{self.name}: expected trailing shape {self.event_shape}, got {x.shape}")
        return x

    def energy(self, x) -> np.ndarray:
        """Reduced energy ``U / k_B T``; overflow and NaN saturate at ``cap``."""
        x = self._check(x)
        with np.errstate(all="ignore"):
            u = np.asarray(self.potential(x), dtype=float) / self.temperature
        return np.where(np.isfinite(u) & (u < self.cap), u, self.cap)

    def gradient(self, x) -> np.ndarray:
        return self.energy_and_gradient(x)[1]

    def energy_and_gradient(self, x):
        x = self._check(x)
        _, g = value_and_grad(lambda X: self.potential(X).sum(), x)
        return self.energy(x), g / self.temperature

    def log_density_unnormalized(self, x) -> np.ndarray:
        return -self.energy(x)

    def is_valid_energy(self, u) -> np.ndarray:
        return np.asarray(u) < self.cap
