"""Evaluation: TICA, free-energy projections, Ramachandran histograms and
the torus Wasserstein distance between them.

Every function accepts optional log-weights; ``None`` means equal weights.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import sparse

from .dataio.atomic import atomic_write_text
from .errors import ContractViolation, ConvergenceError, DomainError
from .numcore import sym_eig
from .reweight import EmptySupport, normalized_weights

__all__ = [
    "TicaModel", "torsion_features", "tica_fit", "tica_transform",
    "FreeEnergyProfile", "free_energy_projection", "free_energy_difference",
    "ramachandran_hist", "torus_cost", "round_plan", "sinkhorn", "WassersteinConfig", "WassersteinResult",
    "ramachandran_wasserstein", "table_text", "write_table",
]


def _weights(n, log_weights):
    if log_weights is None:
        return np.full(n, 1.0 / n)
    lw = np.asarray(log_weights, dtype=float).reshape(-1)
    if len(lw) != n:
        raise ContractViolation(f"{n} values but {len(lw)} log-weights")
    return normalized_weights(lw)


# TICA -------------------------------------------------------------------

@dataclass
class TicaModel:
    lag: int
    mean: np.ndarray
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray  # columns, C0-orthonormal
    c0: np.ndarray
    ctau: np.ndarray
    features: str = "sin/cos of torsions"

    @property
    def timescales(self) -> np.ndarray:
        with np.errstate(divide="ignore", invalid="ignore"):
            return -self.lag / np.log(np.abs(self.eigenvalues))


def torsion_features(angles) -> np.ndarray:
    """``(F, T)`` torsions to ``(F, 2T)`` features ``(sin, cos)``."""
    a = np.asarray(angles, dtype=float)
    a = a.reshape(len(a), -1)
    return np.concatenate([np.sin(a), np.cos(a)], axis=1)


def tica_fit(features, lag: int, weights=None, reg: float = 1e-8) -> TicaModel:
    """Solve ``C_tau w = lambda C_0 w`` with the symmetrised lagged covariance.

    ``features`` is one ``(F, d)`` array or a list of trajectories.  Frame
    weights (linear, not log) weight each lagged pair by its first frame.
    ``C_0`` gets ``reg * trace / d`` added to its diagonal.
    """
    trajs = [np.asarray(features, dtype=float)] if not isinstance(features, (list, tuple)) else [
        np.asarray(f, dtype=float) for f in features
    ]
    trajs = [t.reshape(len(t), -1) for t in trajs]
    if weights is None:
        wts = [np.ones(len(t)) for t in trajs]
    else:
        wts = [np.asarray(weights, dtype=float).reshape(-1)] if len(trajs) == 1 else [np.asarray(w, float) for w in weights]
    if lag < 1 or all(len(t) <= lag for t in trajs):
        raise ContractViolation(f"trajectories must be longer than the lag {lag}")
    for t in trajs:
        if not np.all(np.isfinite(t)):
            raise DomainError("features must be finite")
    d = trajs[0].shape[1]
    wsum = sum(w.sum() for w in wts)
    mean = sum((w[:, None] * t).sum(axis=0) for t, w in zip(trajs, wts)) / wsum
    c0 = np.zeros((d, d))
    ct = np.zeros((d, d))
    norm = 0.0
    for t, w in zip(trajs, wts):
        if len(t) <= lag:
            continue
        x = t[:-lag] - mean
        y = t[lag:] - mean
        pw = w[:-lag]
        c0 += 0.5 * ((x * pw[:, None]).T @ x + (y * pw[:, None]).T @ y)
        ct += 0.5 * ((x * pw[:, None]).T @ y + (y * pw[:, None]).T @ x)
        norm += pw.sum()
    c0 /= norm
    ct /= norm
    c0r = c0 + reg * np.trace(c0) / d * np.eye(d)
    vals, vecs = sym_eig(ct, c0r)
    return TicaModel(lag, mean, vals, vecs, c0r, ct)


def tica_transform(model: TicaModel, features, n_components: int | None = None) -> np.ndarray:
    x = np.asarray(features, dtype=float)
    x = x.reshape(len(x), -1)
    v = model.eigenvectors if n_components is None else model.eigenvectors[:, :n_components]
    return (x - model.mean) @ v


# free energies ----------------------------------------------------------

@dataclass
class FreeEnergyProfile:
    edges: np.ndarray
    free_energy: np.ndarray  # k_B T, NaN where masked
    mask: np.ndarray  # True where the bin holds weight

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.edges[1:] + self.edges[:-1])


def free_energy_projection(values, log_weights=None, bins=50, range=None) -> FreeEnergyProfile:
    """``F_b = -log(sum_{i in b} w_i / sum_i w_i)`` shifted to minimum zero."""
    v = np.asarray(values, dtype=float).reshape(-1)
    if len(v) == 0:
        raise EmptySupport("no values")
    w = _weights(len(v), log_weights)
    mass, edges = np.histogram(v, bins=bins, range=range, weights=w)
    mask = mass > 0
    if not mask.any():
        raise EmptySupport("no weight falls inside the histogram range")
    f = np.full(mass.shape, np.nan)
    f[mask] = -np.log(mass[mask])
    f -= np.nanmin(f)
    return FreeEnergyProfile(edges, f, mask)


def free_energy_difference(values, log_weights=None, boundary: float = 0.0) -> float:
    """``-log(P(v >= boundary) / P(v < boundary))`` in k_B T."""
    v = np.asarray(values, dtype=float).reshape(-1)
    w = _weights(len(v), log_weights)
    hi = w[v >= boundary].sum()
    lo = w[v < boundary].sum()
    if hi <= 0 or lo <= 0:
        raise EmptySupport("one side of the boundary carries no weight")
    return float(-np.log(hi / lo))


# Ramachandran -----------------------------------------------------------

def _periodic_bin(a, bins):
    a = np.asarray(a, dtype=float)
    return np.floor((a + np.pi) / (2 * np.pi) * bins).astype(int) % bins


def ramachandran_hist(phi, psi, log_weights=None, bins: int = 60):
    """Weighted density over the torus; ``(bins, bins)`` array summing to 1
    (first axis ``phi``) and the shared bin edges."""
    phi = np.asarray(phi, dtype=float).reshape(-1)
    psi = np.asarray(psi, dtype=float).reshape(-1)
    if len(phi) == 0 or len(phi) != len(psi):
        raise ContractViolation("phi and psi must be non-empty and of equal length")
    w = _weights(len(phi), log_weights)
    h = np.zeros((bins, bins))
    np.add.at(h, (_periodic_bin(phi, bins), _periodic_bin(psi, bins)), w)
    return h / h.sum(), np.linspace(-np.pi, np.pi, bins + 1)


def torus_cost(points_a, points_b) -> np.ndarray:
    """Geodesic distance on the flat torus ``(-pi, pi]^2``."""
    d = np.abs(points_a[:, None, :] - points_b[None, :, :])
    d = np.minimum(d, 2 * np.pi - d)
    return np.sqrt((d * d).sum(axis=-1))


def _lse(z, axis):
    m = z.max(axis=axis, keepdims=True)
    np.subtract(z, m, out=z)
    np.exp(z, out=z)
    return np.log(z.sum(axis=axis)) + np.squeeze(m, axis=axis)


def round_plan(plan, a, b) -> np.ndarray:
    """Project an approximate plan onto the transport polytope of ``(a, b)``
    (the row/column rounding of Altschuler, Weed and Rigollet)."""
    x = plan * np.minimum(a / np.maximum(plan.sum(axis=1), 1e-300), 1.0)[:, None]
    x = x * np.minimum(b / np.maximum(x.sum(axis=0), 1e-300), 1.0)[None, :]
    er = np.maximum(a - x.sum(axis=1), 0.0)
    ec = np.maximum(b - x.sum(axis=0), 0.0)
    s = er.sum()
    return x + np.outer(er, ec) / s if s > 0 else x


def _truncated_kernel(f, g, cost, e, theta):
    """Sparse ``exp((f_i + g_j - C_ij) / e)`` keeping entries within ``theta``
    of their row or column maximum."""
    s = (f[:, None] + g[None, :] - cost) / e
    keep = (s > s.max(axis=1, keepdims=True) - theta) | (s > s.max(axis=0, keepdims=True) - theta)
    i, j = np.nonzero(keep)
    return sparse.csr_matrix((np.exp(s[i, j]), (i, j)), shape=s.shape)


def _row_residual(f, g, cost, e, a):
    """L1 error of the row marginals of the dense plan ``exp((f + g - C) / e)``."""
    rows = np.exp(_lse((f[:, None] + g[None, :] - cost) / e, axis=1))
    return float(np.abs(rows - a).sum())


def sinkhorn(a, b, cost, eps: float, max_iter: int = 20000, tol: float = 1e-6, eps_start: float | None = None,
             truncation: float = 50.0):
    """Stabilised Sinkhorn scaling with epsilon scaling and kernel truncation.

    The plan is ``exp((f_i + g_j - C_ij) / eps)``.  Scaling vectors are
    absorbed into the dual potentials ``f, g`` whenever they leave
    ``[e^-10, e^10]``, and the kernel is rebuilt sparsely, dropping entries
    more than ``truncation`` (in units of ``eps``) below their row or column
    maximum.  ``eps`` is reached by halving from ``eps_start`` (default: the
    largest cost).  Every stage ends with a dense marginal check, so
    truncation never hides a residual.

    Returns ``(plan, iterations, marginal residual)``; the residual is the
    L1 row-marginal error before the plan is rounded onto the exact
    marginals.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    cost = np.asarray(cost, dtype=float)
    f = np.zeros(len(a))
    g = np.zeros(len(b))
    e = max(eps_start if eps_start is not None else float(cost.max()), eps)
    schedule = []
    while e > eps:
        schedule.append(e)
        e *= 0.5
    schedule.append(eps)
    it = 0
    resid = np.inf
    for k, e in enumerate(schedule):
        stage_tol = tol if k == len(schedule) - 1 else max(tol, 1e-3)
        while True:
            kern = _truncated_kernel(f, g, cost, e, truncation)
            kt = kern.T.tocsr()
            u = np.ones(len(a))
            v = np.ones(len(b))
            converged = False
            while True:
                u = a / np.maximum(kern @ v, 1e-300)
                v = b / np.maximum(kt @ u, 1e-300)
                it += 1
                if it % 10 == 0:
                    r = float(np.abs(u * (kern @ v) - a).sum())
                    if r < stage_tol:
                        converged = True
                        break
                if max(np.abs(np.log(u)).max(), np.abs(np.log(v)).max()) > 10.0:
                    break
                if it >= max_iter:
                    break
            f = f + e * np.log(u)
            g = g + e * np.log(v)
            if converged:
                resid = _row_residual(f, g, cost, e, a)
                if resid < stage_tol:
                    break
            if it >= max_iter:
                resid = _row_residual(f, g, cost, e, a)
                raise ConvergenceError(
                    f"Sinkhorn did not converge in {max_iter} iterations (eps={e:g}, marginal residual {resid:.3g})"
                )
    plan = np.exp((f[:, None] + g[None, :] - cost) / eps)
    return round_plan(plan, a, b), it, float(resid)


@dataclass(frozen=True)
class WassersteinConfig:
    bins: int = 60
    eps: float = 1e-3
    max_iter: int = 50000
    tol: float = 1e-3


@dataclass
class WassersteinResult:
    distance: float
    floor: float  # bound on the entropic bias: eps * min(H(a), H(b))
    iterations: int
    residual: float
    config: WassersteinConfig = field(default_factory=WassersteinConfig)

    def as_dict(self) -> dict:
        return {"distance": self.distance, "floor": self.floor, "iterations": self.iterations,
                "residual": self.residual, "bins": self.config.bins, "eps": self.config.eps,
                "ground_metric": "torus-geodesic"}


def _entropy(p):
    p = p[p > 0]
    return float(-(p * np.log(p)).sum())


def ramachandran_wasserstein(p, q, config: WassersteinConfig = WassersteinConfig()) -> WassersteinResult:
    """Entropic W1 between two Ramachandran histograms.

    ``p`` and ``q`` are ``(phi, psi)`` or ``(phi, psi, log_weights)`` tuples.
    Only occupied bins enter the transport problem.
    """
    hp, _ = ramachandran_hist(*p, bins=config.bins)
    hq, _ = ramachandran_hist(*q, bins=config.bins)
    width = 2 * np.pi / config.bins
    centers = -np.pi + width * (np.arange(config.bins) + 0.5)
    grid = np.stack(np.meshgrid(centers, centers, indexing="ij"), axis=-1).reshape(-1, 2)
    a = hp.reshape(-1)
    b = hq.reshape(-1)
    ia = np.flatnonzero(a > 0)
    ib = np.flatnonzero(b > 0)
    cost = torus_cost(grid[ia], grid[ib])
    plan, it, resid = sinkhorn(a[ia], b[ib], cost, config.eps, config.max_iter, config.tol)
    dist = float((plan * cost).sum())
    floor = config.eps * min(_entropy(a), _entropy(b))
    return WassersteinResult(dist, floor, it, resid, config)


# tables -----------------------------------------------------------------

def table_text(columns: dict, meta: dict | None = None) -> str:
    """Tab-separated table with ``# key=value`` metadata lines on top."""
    names = list(columns)
    cols = [np.asarray(columns[k]).reshape(-1) for k in names]
    n = len(cols[0]) if cols else 0
    if any(len(c) != n for c in cols):
        raise ContractViolation("table columns differ in length")
    out = [f"# {k}={v}" for k, v in (meta or {}).items()]
    out.append("\t".join(names))
    for i in range(n):
        out.append("\t".join("nan" if isinstance(c[i], float) and np.isnan(c[i]) else f"{c[i]:.10g}" if np.issubdtype(c.dtype, np.floating) else str(c[i]) for c in cols))
    return "\n".join(out) + "\n"


def write_table(path, columns: dict, meta: dict | None = None) -> None:
    atomic_write_text(path, table_text(columns, meta))
