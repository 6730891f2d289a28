"""Importance weights, Kish effective sample size and von Mises biasing.

Weights are kept in log space: ``log w = -U - log p`` for valid samples
and ``-inf`` otherwise.  Invalid samples stay in the ensemble and count
towards the nominal sample size.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import i0e

from .errors import ContractViolation, DomainError

log = logging.getLogger(__name__)

__all__ = [
    "WeightedEnsemble", "EmptySupport", "compute_weights", "normalized_weights", "kish_ess",
    "weighted_observable", "weighted_std_error", "vonmises_pdf", "bessel_i0", "vonmises_bias_weights",
    "ess_report",
]


class EmptySupport(DomainError):
    """No sample carries positive weight."""


@dataclass
class WeightedEnsemble:
    samples: np.ndarray
    model_logp: np.ndarray
    energies: np.ndarray
    valid: np.ndarray | None = None
    log_weights: np.ndarray | None = None
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=float)
        n = len(self.samples)
        self.model_logp = np.asarray(self.model_logp, dtype=float).reshape(n)
        self.energies = np.asarray(self.energies, dtype=float).reshape(n)
        self.valid = np.ones(n, dtype=bool) if self.valid is None else np.asarray(self.valid, dtype=bool).reshape(n)
        if self.log_weights is not None:
            self.log_weights = np.asarray(self.log_weights, dtype=float).reshape(n)

    def __len__(self):
        return len(self.samples)

    @property
    def n_valid(self) -> int:
        return int(self.valid.sum())

    @property
    def valid_fraction(self) -> float:
        return self.n_valid / len(self) if len(self) else 0.0

    def weights(self) -> np.ndarray:
        return normalized_weights(self._require_weights())

    def _require_weights(self):
        if self.log_weights is None:
            raise ContractViolation("call compute_weights first")
        return self.log_weights


def compute_weights(ens: WeightedEnsemble) -> WeightedEnsemble:
    """``log w = -U - log p`` on valid samples, ``-inf`` elsewhere."""
    ok = ens.valid & np.isfinite(ens.energies) & np.isfinite(ens.model_logp)
    if not ok.any():
        raise EmptySupport("every sample is invalid; the ensemble has no support")
    lw = np.full(len(ens), -np.inf)
    lw[ok] = -ens.energies[ok] - ens.model_logp[ok]
    return replace(ens, log_weights=lw)


def normalized_weights(log_weights) -> np.ndarray:
    """Self-normalised weights; one max-subtraction before exponentiating."""
    lw = np.asarray(log_weights, dtype=float)
    fin = np.isfinite(lw)
    if not fin.any():
        raise EmptySupport("no finite log-weight")
    w = np.zeros_like(lw)
    w[fin] = np.exp(lw[fin] - lw[fin].max())
    return w / w.sum()


def kish_ess(log_weights) -> float:
    """Relative ESS ``(sum w)^2 / (n sum w^2)``; ``n`` counts every entry,
    including ``-inf`` (invalid) ones."""
    lw = np.asarray(log_weights, dtype=float).reshape(-1)
    w = normalized_weights(lw)
    return float(1.0 / (len(lw) * np.sum(w * w)))


def weighted_observable(ens_or_logw, values) -> float:
    """Self-normalised estimate ``sum w O / sum w``.

    ``values`` is an array of ``O(x_i)`` or a callable applied to the samples.
    """
    if isinstance(ens_or_logw, WeightedEnsemble):
        lw = ens_or_logw._require_weights()
        if callable(values):
            values = values(ens_or_logw.samples)
    else:
        lw = ens_or_logw
    w = normalized_weights(lw)
    o = np.asarray(values, dtype=float).reshape(len(w))
    nz = w > 0
    return float(np.sum(w[nz] * o[nz]))


def weighted_std_error(log_weights, values) -> float:
    """Delta-method standard error of the self-normalised estimate."""
    w = normalized_weights(log_weights)
    o = np.asarray(values, dtype=float).reshape(len(w))
    nz = w > 0
    mu = np.sum(w[nz] * o[nz])
    return float(np.sqrt(np.sum((w[nz] * (o[nz] - mu)) ** 2)))


def bessel_i0(kappa) -> np.ndarray:
    """Modified Bessel function ``I_0``."""
    return i0e(kappa) * np.exp(np.abs(kappa))


def vonmises_pdf(phi, mu: float = 1.0, kappa: float = 10.0) -> np.ndarray:
    """``exp(kappa cos(phi - mu)) / (2 pi I_0(kappa))``, evaluated stably."""
    phi = np.asarray(phi, dtype=float)
    return np.exp(kappa * (np.cos(phi - mu) - 1.0)) / (2.0 * np.pi * i0e(kappa))


def vonmises_bias_weights(phi, mu: float = 1.0, kappa: float = 10.0, return_r: bool = False):
    """Per-frame weights ``omega = r f_vM(phi) + 1`` balancing the total
    weight of ``phi >= 0`` and ``phi < 0`` frames.

    ``r`` solves ``sum_{phi<0} omega = sum_{phi>=0} omega`` exactly and is
    clamped at zero; with no positive frames it is undefined and all
    weights are one.
    """
    phi = np.asarray(phi, dtype=float).reshape(-1)
    if np.any(phi <= -np.pi - 1e-12) or np.any(phi > np.pi + 1e-12):
        raise DomainError("angles must lie in (-pi, pi]")
    f = vonmises_pdf(phi, mu, kappa)
    pos = phi >= 0
    if not pos.any():
        log.warning("no frames with phi >= 0; returning unit weights")
        out = np.ones_like(phi)
        return (out, float("nan")) if return_r else out
    s_pos, s_neg = f[pos].sum(), f[~pos].sum()
    n_pos, n_neg = pos.sum(), (~pos).sum()
    denom = s_pos - s_neg
    r = (n_neg - n_pos) / denom if denom > 0 else 0.0
    r = max(float(r), 0.0)
    out = r * f + 1.0
    return (out, r) if return_r else out


def ess_report(ens: WeightedEnsemble) -> dict:
    lw = ens._require_weights()
    return {
        "n": len(ens),
        "n_valid": ens.n_valid,
        "valid_fraction": ens.valid_fraction,
        "ess_relative": kish_ess(lw),
    }
