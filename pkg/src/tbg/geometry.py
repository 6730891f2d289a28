"""Internal coordinates written against :mod:`tbg.numcore.ops`.

Every function takes coordinates of shape ``(..., N, 3)`` and index arrays
selecting atoms; it works on ndarrays and on tape variables alike, so
force-field energies differentiate without a second implementation.
"""
from __future__ import annotations

import numpy as np

from .numcore import ops

__all__ = ["cross", "dot", "norm", "distances", "bond_angles", "dihedrals", "signed_volumes", "place_atom"]

_EPS = 1e-30


def dot(a, b):
    return (a * b).sum(axis=-1)


def cross(a, b):
    a0, a1, a2 = a[..., 0], a[..., 1], a[..., 2]
    b0, b1, b2 = b[..., 0], b[..., 1], b[..., 2]
    parts = [a1 * b2 - a2 * b1, a2 * b0 - a0 * b2, a0 * b1 - a1 * b0]
    return ops.concat([p.reshape(p.shape + (1,)) for p in parts], axis=-1)


def norm(a):
    return ops.sqrt(dot(a, a) + _EPS)


def _pick(x, idx):
    return x[..., np.asarray(idx), :]


def distances(x, pairs):
    pairs = np.asarray(pairs).reshape(-1, 2)
    return norm(_pick(x, pairs[:, 0]) - _pick(x, pairs[:, 1]))


def bond_angles(x, triples):
    """Angle at the middle atom of each ``(i, j, k)``, in ``[0, pi]``."""
    triples = np.asarray(triples).reshape(-1, 3)
    a = _pick(x, triples[:, 0]) - _pick(x, triples[:, 1])
    b = _pick(x, triples[:, 2]) - _pick(x, triples[:, 1])
    return ops.atan2(norm(cross(a, b)), dot(a, b))


def dihedrals(x, quads):
    """Signed dihedral of each ``(i, j, k, l)`` in ``(-pi, pi]``."""
    quads = np.asarray(quads).reshape(-1, 4)
    p0, p1, p2, p3 = (_pick(x, quads[:, k]) for k in range(4))
    b1 = p1 - p0
    b2 = p2 - p1
    b3 = p3 - p2
    n1 = cross(b1, b2)
    n2 = cross(b2, b3)
    y = dot(cross(n1, n2), b2)
    xx = dot(n1, n2) * norm(b2)
    return ops.atan2(y, xx)


def signed_volumes(x, quads):
    """``det[b - a, c - a, d - a]`` for each ``(a, b, c, d)``."""
    quads = np.asarray(quads).reshape(-1, 4)
    a, b, c, d = (_pick(x, quads[:, k]) for k in range(4))
    return dot(b - a, cross(c - a, d - a))


def place_atom(a, b, c, bond: float, angle: float, torsion: float) -> np.ndarray:
    """Position of ``d`` with ``|cd| = bond``, angle ``bcd`` and dihedral ``abcd``."""
    a, b, c = (np.asarray(p, dtype=float) for p in (a, b, c))
    bc = c - b
    bc /= np.linalg.norm(bc)
    n = np.cross(b - a, bc)
    n /= np.linalg.norm(n)
    m = np.cross(n, bc)
    d2 = np.array([-bond * np.cos(angle), bond * np.sin(angle) * np.cos(torsion), bond * np.sin(angle) * np.sin(torsion)])
    return c + d2[0] * bc + d2[1] * m + d2[2] * n
