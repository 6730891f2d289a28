"""Molecular topology: atoms, bonds and reference chiral centres."""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import ContractViolation

__all__ = ["Atom", "ChiralCenter", "MolecularTopology", "AMINO_ACIDS", "ELEMENTS"]

ELEMENTS = ("H", "C", "N", "O", "S")

AMINO_ACIDS = (
    "ALA", "ARG", "ASN", "ASP", "CYS", "GLN", "GLU", "GLY", "HIS", "ILE",
    "LEU", "LYS", "MET", "PHE", "PRO", "SER", "THR", "TRP", "TYR", "VAL",
)


@dataclass(frozen=True)
class Atom:
    element: str
    name: str
    residue: str = "UNK"
    residue_index: int = 0


@dataclass(frozen=True)
class ChiralCenter:
    """Tetrahedral centre with its four substituents in priority order."""

    center: int
    substituents: tuple[int, int, int, int]
    sign: int

    def __post_init__(self):
        idx = (self.center,) + tuple(self.substituents)
        if len(set(idx)) != 5:
            raise ContractViolation(f"chiral centre indices must be distinct: {idx}")
        if self.sign not in (1, -1):
            raise ContractViolation("reference sign must be +1 or -1")


@dataclass(frozen=True)
class MolecularTopology:
    name: str
    atoms: tuple[Atom, ...]
    bonds: tuple[tuple[int, int], ...] = ()
    chiral_centers: tuple[ChiralCenter, ...] = ()
    dim: int = 3
    metadata: dict = field(default_factory=dict, compare=False, hash=False)

    def __post_init__(self):
        n = len(self.atoms)
        norm = []
        for i, j in self.bonds:
            if not (0 <= i < n and 0 <= j < n) or i == j:
                raise ContractViolation(f"invalid bond ({i}, {j}) for {n} atoms")
            norm.append((min(i, j), max(i, j)))
        if len(set(norm)) != len(norm):
            raise ContractViolation("duplicate bond")
        object.__setattr__(self, "bonds", tuple(norm))
        for c in self.chiral_centers:
            if max((c.center,) + tuple(c.substituents)) >= n:
                raise ContractViolation(f"chiral centre {c} references a missing atom")

    @property
    def n_atoms(self) -> int:
        return len(self.atoms)

    @property
    def elements(self) -> tuple[str, ...]:
        return tuple(a.element for a in self.atoms)

    @cached_property
    def neighbors(self) -> tuple[tuple[int, ...], ...]:
        nb: list[list[int]] = [[] for _ in self.atoms]
        for i, j in self.bonds:
            nb[i].append(j)
            nb[j].append(i)
        return tuple(tuple(sorted(x)) for x in nb)

    def adjacency(self) -> np.ndarray:
        a = np.zeros((self.n_atoms, self.n_atoms), dtype=bool)
        for i, j in self.bonds:
            a[i, j] = a[j, i] = True
        return a

    def graph_distances(self) -> np.ndarray:
        """All-pairs bond-count distances (``inf`` when disconnected)."""
        n = self.n_atoms
        dist = np.full((n, n), np.inf)
        for s in range(n):
            dist[s, s] = 0
            frontier = [s]
            while frontier:
                nxt = []
                for u in frontier:
                    for w in self.neighbors[u]:
                        if dist[s, w] == np.inf:
                            dist[s, w] = dist[s, u] + 1
                            nxt.append(w)
                frontier = nxt
        return dist

    @property
    def sequence(self) -> tuple[str, ...]:
        seen: dict[int, str] = {}
        for a in self.atoms:
            seen.setdefault(a.residue_index, a.residue)
        return tuple(seen[k] for k in sorted(seen))

    def index(self, name: str, residue_index: int | None = None) -> int:
        for k, a in enumerate(self.atoms):
            if a.name == name and (residue_index is None or a.residue_index == residue_index):
                return k
        raise KeyError(f"atom {name!r} (residue {residue_index}) not in {self.name}")
