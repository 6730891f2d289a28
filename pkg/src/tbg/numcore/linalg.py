"""Symmetric-definite generalized eigenproblem by Cholesky reduction."""
from __future__ import annotations

import numpy as np

from ..errors import ContractViolation, DecompositionError

__all__ = ["sym_eig"]


def sym_eig(a: np.ndarray, b: np.ndarray | None = None):
    """Solve ``A w = lam B w`` for symmetric ``A`` and SPD ``B``.

    Returns eigenvalues in descending order and the matching B-orthonormal
    eigenvectors as columns.
    """
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ContractViolation(f"square matrix required, got {a.shape}")
    b = np.eye(a.shape[0]) if b is None else np.asarray(b, dtype=float)
    if b.shape != a.shape:
        raise ContractViolation("A and B must have equal shapes")
    a = 0.5 * (a + a.T)
    b = 0.5 * (b + b.T)
    try:
        chol = np.linalg.cholesky(b)
    except np.linalg.LinAlgError as exc:
        raise DecompositionError("B is not symmetric positive definite") from exc
    linv = np.linalg.solve(chol, np.eye(len(b)))
    c = linv @ a @ linv.T
    lam, u = np.linalg.eigh(0.5 * (c + c.T))
    order = np.argsort(lam)[::-1]
    lam = lam[order]
    w = linv.T @ u[:, order]
    return lam, w
