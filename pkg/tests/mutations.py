"""Mutation corpus for the validity pipeline.

Every generated case carries its ground truth from a construction that
does not use the code under test.
"""
import numpy as np

from tbg.molkit import BondGraph


def graph_invariant(labels, edges):
    """Sorted (element, sorted neighbour elements) multiset; distinct
    values prove two labelled graphs non-isomorphic."""
    nb = [[] for _ in labels]
    for i, j in edges:
        nb[i].append(labels[j])
        nb[j].append(labels[i])
    return sorted((labels[k], tuple(sorted(nb[k]))) for k in range(len(labels)))


def single_edge_edits(top, count, seed):
    """``count`` graphs one edit away from ``top`` (remove, add or move an
    edge) whose invariant differs from the reference."""
    rng = np.random.default_rng(seed)
    ref_edges = set(top.bonds)
    ref_inv = graph_invariant(top.elements, ref_edges)
    n = top.n_atoms
    out = []
    while len(out) < count:
        edges = set(ref_edges)
        kind = rng.integers(3)
        if kind in (0, 2):
            edges.discard(sorted(edges)[rng.integers(len(edges))])
        if kind in (1, 2):
            i, j = sorted(rng.choice(n, 2, replace=False).tolist())
            if (i, j) in edges:
                continue
            edges.add((i, j))
        if graph_invariant(top.elements, edges) == ref_inv:
            continue
        out.append(BondGraph(top.elements, frozenset(edges)))
    return out


def umbrella_invert(x, center):
    """Invert one tetrahedral centre by reflecting the centre atom and its
    last (terminal) substituent through the plane of the other three.

    Every bond length is preserved, so the bond graph is unchanged while
    this centre's handedness flips.
    """
    a, b, c, d = center.substituents
    p0 = x[a]
    nrm = np.cross(x[b] - p0, x[c] - p0)
    nrm /= np.linalg.norm(nrm)
    y = x.copy()
    for k in (center.center, d):
        y[k] = x[k] - 2.0 * np.dot(x[k] - p0, nrm) * nrm
    return y


def fragment_mirror(x, top, cut, plane_atom, moving):
    """Reflect the side of bond ``cut`` that contains atom ``moving`` through
    the plane of ``cut`` and ``plane_atom``.

    Both ends of the cut bond lie on the plane, so every bonded distance is
    preserved; each centre on the moving side flips and the rest keep
    their handedness.
    """
    i, j = cut
    adj = [[] for _ in range(top.n_atoms)]
    for a, b in top.bonds:
        if {a, b} != {i, j}:
            adj[a].append(b)
            adj[b].append(a)
    side, stack = {moving}, [moving]
    while stack:
        for b in adj[stack.pop()]:
            if b not in side:
                side.add(b)
                stack.append(b)
    if i in side and j in side:
        raise ValueError("cut bond lies on a ring")
    p0 = x[i]
    nrm = np.cross(x[j] - p0, x[plane_atom] - p0)
    nrm /= np.linalg.norm(nrm)
    y = x.copy()
    idx = sorted(side)
    y[idx] = x[idx] - 2.0 * ((x[idx] - p0) @ nrm)[:, None] * nrm
    return y
