"""Analytic targets with exact samplers: Gaussian mixtures, a 1-D double
well, and flat targets lifted onto mean-free particle coordinates."""
from __future__ import annotations

import numpy as np

from ..errors import ContractViolation, DecompositionError
from ..numcore import ops
from ..topology import Atom, MolecularTopology
from .base import DEFAULT_CAP, BoltzmannTarget

__all__ = [
    "GaussianMixture", "gmm_target", "DoubleWell", "double_well_target",
    "helmert_basis", "ParticleTarget", "gmm_fixture",
]


def _logsumexp(a, axis=-1):
    m = np.max(ops.value_of(a), axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    s = ops.log(ops.exp(a - m).sum(axis=axis))
    return s + np.squeeze(m, axis=axis)


class GaussianMixture(BoltzmannTarget):
    """``U(x) = -log sum_k w_k N(x | m_k, S_k)`` on ``R^D``."""

    name = "gmm"

    def __init__(self, means, covs, weights, temperature: float = 1.0, cap: float = DEFAULT_CAP):
        super().__init__(temperature, cap)
        self.means = np.atleast_2d(np.asarray(means, dtype=float))
        k, d = self.means.shape
        self.covs = np.asarray(covs, dtype=float).reshape(k, d, d)
        self.weights = np.asarray(weights, dtype=float).reshape(k)
        if np.any(self.weights <= 0) or abs(self.weights.sum() - 1.0) > 1e-9:
            raise ContractViolation("mixture weights must be positive and sum to 1")
        try:
            self.chol = np.linalg.cholesky(self.covs)
        except np.linalg.LinAlgError:
            raise DecompositionError("mixture covariance is singular or not positive definite") from None
        self.prec_chol = np.linalg.inv(self.chol)  # L^{-1}
        logdet = 2.0 * np.log(np.diagonal(self.chol, axis1=1, axis2=2)).sum(axis=1)
        self.log_norm = np.log(self.weights) - 0.5 * logdet - 0.5 * d * np.log(2 * np.pi)
        self.event_shape = (d,)

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    def component_logpdf(self, x):
        """``log w_k N(x | m_k, S_k)`` with a trailing component axis."""
        diff = x.reshape(x.shape[:-1] + (1, self.dim)) - self.means
        # z_k = L_k^{-1} (x - m_k), one matrix per component
        z = (diff.reshape(diff.shape + (1,)) * np.swapaxes(self.prec_chol, 1, 2)).sum(axis=-2)
        return self.log_norm - 0.5 * (z * z).sum(axis=-1)

    def potential(self, x):
        return -_logsumexp(self.component_logpdf(x), axis=-1)

    def responsibilities(self, x) -> np.ndarray:
        lp = np.asarray(self.component_logpdf(np.asarray(x, dtype=float)))
        lp = lp - lp.max(axis=-1, keepdims=True)
        p = np.exp(lp)
        return p / p.sum(axis=-1, keepdims=True)

    def exact_sample(self, count, rng):
        comp = rng.choice(len(self.weights), size=count, p=self.weights)
        z = rng.standard_normal((count, self.dim))
        return self.means[comp] + np.einsum("nij,nj->ni", self.chol[comp], z)


def gmm_target(means, covs, weights, **kw) -> GaussianMixture:
    return GaussianMixture(means, covs, weights, **kw)


class DoubleWell(BoltzmannTarget):
    """``U(x) = barrier (x^2 - 1)^2 + tilt x`` on the line."""

    name = "double-well"
    event_shape = (1,)

    def __init__(self, barrier: float = 3.0, tilt: float = 0.5, temperature: float = 1.0, cap: float = DEFAULT_CAP):
        super().__init__(temperature, cap)
        self.barrier = float(barrier)
        self.tilt = float(tilt)

    def potential(self, x):
        s = x[..., 0]
        q = s * s - 1.0
        return self.barrier * q * q + self.tilt * s

    def initial_state(self):
        return np.array([-1.0])


def double_well_target(barrier: float = 3.0, tilt: float = 0.5, **kw) -> DoubleWell:
    return DoubleWell(barrier, tilt, **kw)


def helmert_basis(n: int) -> np.ndarray:
    """``(n, n-1)`` orthonormal basis of the vectors with zero sum."""
    h = np.zeros((n, n - 1))
    for k in range(1, n):
        h[:k, k - 1] = 1.0
        h[k, k - 1] = -k
        h[:, k - 1] /= np.sqrt(k * (k + 1))
    return h


class ParticleTarget(BoltzmannTarget):
    """A flat target on ``R^{dim (N-1)}`` expressed in particle coordinates.

    A configuration ``x`` of shape ``(N, dim)`` maps to
    ``y = (H^T x).ravel()`` with ``H`` the Helmert basis, an isometry of the
    mean-free subspace.  Densities therefore agree with the flat target and
    the energy is translation invariant.
    """

    def __init__(self, base: BoltzmannTarget, n_atoms: int, dim: int, elements=None, name=None):
        super().__init__(base.temperature, base.cap)
        if base.event_shape != (dim * (n_atoms - 1),):
            raise ContractViolation(f"base target must live on R^{dim * (n_atoms - 1)}")
        self.base = base
        self.n_atoms = n_atoms
        self.dim = dim
        self.event_shape = (n_atoms, dim)
        self.name = name or f"{base.name}-particles"
        self.H = helmert_basis(n_atoms)
        elements = elements or ["C"] * n_atoms
        atoms = tuple(Atom(el, f"{el}{i}", "UNK", 0) for i, el in enumerate(elements))
        self.topology = MolecularTopology(self.name, atoms, dim=dim)

    def to_flat(self, x):
        y = self.H.T @ x
        return y.reshape(y.shape[:-2] + (self.dim * (self.n_atoms - 1),))

    def from_flat(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        return self.H @ y.reshape(y.shape[:-1] + (self.n_atoms - 1, self.dim))

    def potential(self, x):
        return self.base.potential(self.to_flat(x))

    def exact_sample(self, count, rng):
        return self.from_flat(self.base.exact_sample(count, rng))


def gmm_fixture(weights=(0.7, 0.3)) -> ParticleTarget:
    """Two-component Gaussian mixture on a 2-D plane, carried by three
    distinguishable particles on a line.

    The components are mirror images through the origin, so the only
    symmetry of the flow (``x -> -x``) maps one mode onto the other; the
    unequal weights are what reweighting has to restore.
    """
    m = np.array([1.6, 0.6])
    cov = np.array([[0.30, 0.08], [0.08, 0.20]])
    base = GaussianMixture([m, -m], [cov, cov], weights)
    return ParticleTarget(base, 3, 1, elements=["C", "N", "O"], name="gmm2d")
