"""Bond perception, topology matching, chirality and torsions.

A generated configuration is accepted when the bond graph perceived from
its coordinates is isomorphic to the reference topology (the recovered
atom mapping then reorders it) and every chiral centre has the reference
handedness.  A sample with all centres inverted is repaired by mirroring.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from importlib import resources

import numpy as np

from .errors import ContractViolation, DomainError, ParseError, VersionError
from .topology import ChiralCenter, MolecularTopology

log = logging.getLogger(__name__)

__all__ = [
    "BondGraph", "load_covalent_radii", "perceive_bonds", "MatchResult", "match_topology",
    "ChiralityResult", "check_chirality", "mirror", "torsion", "Validation", "validate_samples",
    "BOND_TOLERANCE", "SEARCH_BUDGET", "CHIRAL_EPS",
]

BOND_TOLERANCE = 0.25
SEARCH_BUDGET = 1_000_000
CHIRAL_EPS = 1e-9  # nm^3


def load_covalent_radii(path=None) -> dict[str, float]:
    """Covalent radii in nm from the versioned table (packaged by default)."""
    if path is None:
        text = resources.files("tbg.data").joinpath("covalent_radii.txt").read_text()
    else:
        with open(path) as fh:
            text = fh.read()
    lines = text.splitlines()
    if not lines or not lines[0].startswith("# tbg-covalent-radii"):
        raise ParseError("missing covalent-radii header", line=1)
    fields = dict(f.split("=", 1) for f in lines[0].split()[2:])
    if fields.get("version") != "1":
        raise VersionError(f"covalent-radii version {fields.get('version')} unsupported")
    out = {}
    for ln, line in enumerate(lines[1:], start=2):
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 2:
            raise ParseError("expected '<element> <radius>'", line=ln)
        try:
            out[parts[0]] = float(parts[1])
        except ValueError:
            raise ParseError(f"bad radius {parts[1]!r}", line=ln) from None
    return out


_RADII = None


def _default_radii():
    global _RADII
    if _RADII is None:
        _RADII = load_covalent_radii()
    return _RADII


@dataclass(frozen=True)
class BondGraph:
    labels: tuple[str, ...]
    edges: frozenset

    def __post_init__(self):
        for i, j in self.edges:
            if i == j:
                raise ContractViolation("bond graphs have no self-edges")

    @property
    def n_nodes(self) -> int:
        return len(self.labels)

    def adjacency(self) -> np.ndarray:
        a = np.zeros((self.n_nodes, self.n_nodes), dtype=bool)
        for i, j in self.edges:
            a[i, j] = a[j, i] = True
        return a

    @classmethod
    def from_topology(cls, top: MolecularTopology) -> "BondGraph":
        return cls(top.elements, frozenset(top.bonds))


def perceive_bonds(x, elements, radii: dict | None = None, tolerance: float = BOND_TOLERANCE) -> BondGraph:
    """Bond ``i-j`` iff ``d_ij`` lies within ``(r_i + r_j)(1 -+ tolerance)``."""
    x = np.asarray(x, dtype=float)
    radii = radii or _default_radii()
    try:
        r = np.array([radii[e] for e in elements])
    except KeyError as exc:
        raise DomainError(f"no covalent radius for element {exc.args[0]!r}") from None
    if x.shape[0] != len(r):
        raise ContractViolation("one element per atom required")
    d = np.linalg.norm(x[:, None, :] - x[None, :, :], axis=-1)
    s = r[:, None] + r[None, :]
    bonded = (d >= s * (1 - tolerance)) & (d <= s * (1 + tolerance))
    i, j = np.nonzero(np.triu(bonded, 1))
    return BondGraph(tuple(elements), frozenset(zip(i.tolist(), j.tolist())))


@dataclass(frozen=True)
class MatchResult:
    """``permutation[r]`` is the sample atom matched to reference atom ``r``,
    so ``x[permutation]`` is the sample in reference order."""

    verdict: str  # "isomorphic" | "mismatch" | "indeterminate"
    permutation: np.ndarray | None = None
    explored: int = 0

    @property
    def ok(self) -> bool:
        return self.verdict == "isomorphic"


def _refine(labels, adj_lists):
    """Colour refinement; returns integer colours comparable across graphs
    that were refined together."""
    colors = list(labels)
    while True:
        sig = [(colors[i], tuple(sorted(colors[j] for j in adj_lists[i]))) for i in range(len(colors))]
        table = {s: k for k, s in enumerate(sorted(set(sig), key=repr))}
        new = [table[s] for s in sig]
        if len(set(new)) == len(set(colors)):
            return new
        colors = new


def match_topology(g: BondGraph, ref: MolecularTopology, budget: int = SEARCH_BUDGET) -> MatchResult:
    """Label-preserving isomorphism search between ``g`` and ``ref``'s bonds."""
    n = ref.n_atoms
    if g.n_nodes != n or sorted(g.labels) != sorted(ref.elements) or len(g.edges) != len(ref.bonds):
        return MatchResult("mismatch")
    adj_s = [[] for _ in range(n)]
    for i, j in g.edges:
        adj_s[i].append(j)
        adj_s[j].append(i)
    adj_r = [list(nb) for nb in ref.neighbors]
    # refine both graphs as one disjoint union so colours are shared
    labels = list(ref.elements) + list(g.labels)
    union = adj_r + [[k + n for k in nb] for nb in adj_s]
    col = _refine(labels, union)
    col_r, col_s = col[:n], col[n:]
    if sorted(col_r) != sorted(col_s):
        return MatchResult("mismatch")
    A_s = g.adjacency()
    A_r = ref.adjacency()

    # BFS order over the reference keeps each new atom adjacent to placed ones
    order, seen = [], set()
    for start in sorted(range(n), key=lambda k: (sum(c == col_r[k] for c in col_r), k)):
        if start in seen:
            continue
        seen.add(start)
        queue = [start]
        while queue:
            u = queue.pop(0)
            order.append(u)
            for w in adj_r[u]:
                if w not in seen:
                    seen.add(w)
                    queue.append(w)
    cands = {c: [s for s in range(n) if col_s[s] == c] for c in set(col_r)}
    perm = -np.ones(n, dtype=int)
    used = np.zeros(n, dtype=bool)
    explored = 0

    def consistent(r, s, depth):
        for q in order[:depth]:
            if A_r[r, q] != A_s[s, perm[q]]:
                return False
        return True

    # iterative backtracking over (depth, candidate cursor)
    cursor = [0] * n
    depth = 0
    while depth >= 0:
        if depth == n:
            return MatchResult("isomorphic", perm.copy(), explored)
        r = order[depth]
        options = cands[col_r[r]]
        placed = False
        while cursor[depth] < len(options):
            s = options[cursor[depth]]
            cursor[depth] += 1
            if used[s]:
                continue
            explored += 1
            if explored > budget:
                log.warning("isomorphism search budget of %d nodes exceeded", budget)
                return MatchResult("indeterminate", None, explored)
            if consistent(r, s, depth):
                perm[r] = s
                used[s] = True
                placed = True
                break
        if placed:
            depth += 1
            if depth < n:
                cursor[depth] = 0
            continue
        depth -= 1
        if depth >= 0:
            r_prev = order[depth]
            used[perm[r_prev]] = False
            perm[r_prev] = -1
    return MatchResult("mismatch", None, explored)


@dataclass(frozen=True)
class ChiralityResult:
    signs: np.ndarray  # +1 / -1 / 0 (indeterminate) per centre
    classification: str  # "correct" | "all-flipped" | "partial" | "indeterminate"


def check_chirality(x, centers, eps: float = CHIRAL_EPS) -> ChiralityResult:
    """Compare the sign of ``det[b - a, c - a, d - a]`` over each centre's
    substituents ``(a, b, c, d)`` with its reference sign."""
    x = np.asarray(x, dtype=float)
    centers = list(centers)
    if not centers:
        return ChiralityResult(np.zeros(0, dtype=int), "correct")
    q = np.array([c.substituents for c in centers])
    a, b, c, d = (x[q[:, k]] for k in range(4))
    vol = np.einsum("ij,ij->i", b - a, np.cross(c - a, d - a))
    signs = np.where(np.abs(vol) < eps, 0, np.sign(vol)).astype(int)
    ref = np.array([cc.sign for cc in centers])
    if np.any(signs == 0):
        cls = "indeterminate"
    elif np.all(signs == ref):
        cls = "correct"
    elif np.all(signs == -ref):
        cls = "all-flipped"
    else:
        cls = "partial"
    return ChiralityResult(signs, cls)


def mirror(x) -> np.ndarray:
    """Reflect through the plane ``x = 0`` (negate the first axis)."""
    y = np.array(x, dtype=float, copy=True)
    y[..., 0] = -y[..., 0]
    return y


def torsion(x, i: int, j: int, k: int, l: int) -> np.ndarray:
    """Signed dihedral in ``(-pi, pi]`` for ``(N, 3)`` or ``(B, N, 3)`` input."""
    x = np.asarray(x, dtype=float)
    b1 = x[..., j, :] - x[..., i, :]
    b2 = x[..., k, :] - x[..., j, :]
    b3 = x[..., l, :] - x[..., k, :]
    n1 = np.cross(b1, b2)
    n2 = np.cross(b2, b3)
    nb1, nb2, nb3 = (np.linalg.norm(v, axis=-1) for v in (b1, b2, b3))
    if np.any(np.linalg.norm(n1, axis=-1) <= 1e-12 * nb1 * nb2) or np.any(np.linalg.norm(n2, axis=-1) <= 1e-12 * nb2 * nb3):
        raise DomainError(f"torsion ({i}, {j}, {k}, {l}) is undefined for collinear atoms")
    y = np.einsum("...i,...i->...", np.cross(n1, n2), b2)
    xx = np.einsum("...i,...i->...", n1, n2) * nb2
    phi = np.arctan2(y, xx)
    return np.where(phi <= -np.pi, np.pi, phi)


@dataclass
class Validation:
    """Per-sample outcome of :func:`validate_samples`.

    ``status`` is ``valid``, ``mismatch``, ``indeterminate``, ``partial``
    (some centres inverted) or ``chiral-indeterminate``.  ``x`` holds the
    reordered (and, where needed, mirrored) configurations.
    """

    x: np.ndarray
    valid: np.ndarray
    mirrored: np.ndarray
    status: list

    @property
    def valid_fraction(self) -> float:
        return float(self.valid.mean()) if len(self.valid) else 0.0

    def counts(self) -> dict:
        out = {}
        for s in self.status:
            out[s] = out.get(s, 0) + 1
        return out


def validate_samples(x, ref: MolecularTopology, radii=None, budget: int = SEARCH_BUDGET) -> Validation:
    """Bond graph, isomorphism with reordering, chirality with mirroring."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 2:
        x = x[None]
    out = np.array(x, copy=True)
    valid = np.zeros(len(x), dtype=bool)
    mirrored = np.zeros(len(x), dtype=bool)
    status = []
    for k, xk in enumerate(x):
        g = perceive_bonds(xk, ref.elements, radii)
        m = match_topology(g, ref, budget)
        if not m.ok:
            status.append(m.verdict)
            continue
        y = xk[m.permutation]
        ch = check_chirality(y, ref.chiral_centers)
        if ch.classification == "all-flipped":
            y = mirror(y)
            mirrored[k] = True
            ch = check_chirality(y, ref.chiral_centers)
        if ch.classification == "correct":
            valid[k] = True
            status.append("valid")
        elif ch.classification == "indeterminate":
            status.append("chiral-indeterminate")
        else:
            status.append("partial")
        out[k] = y
    return Validation(out, valid, mirrored, status)

