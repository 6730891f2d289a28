"""Per-atom one-hot embeddings for the three architecture variants.

* ``tbg``: element only (5 classes).
* ``tbg+backbone``: named backbone atoms get their own class, everything
  else falls back to its element (13 classes).
* ``tbg+full``: topology-derived atom class, residue identity (20) and
  residue position in the chain.

Atom classes for ``tbg+full`` are generated from a topology corpus.  The
class key is ``element|neighbour elements|template name`` where hydrogens
take the name of the heavy atom they sit on, and oxygens sharing a
non-carboxyl carbon take that carbon's name; atoms the model cannot tell
apart therefore share a key.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from ..errors import ContractViolation, ParseError, UnknownAtomClass, VersionError
from ..topology import AMINO_ACIDS, ELEMENTS, MolecularTopology

__all__ = [
    "VARIANTS", "BACKBONE_NAMES", "AtomClassTable", "atom_class_key",
    "generate_class_table", "build_embedding", "embedding_width",
]

VARIANTS = ("tbg", "tbg+backbone", "tbg+full")
BACKBONE_NAMES = ("N", "H", "CA", "HA", "C", "O", "CB", "OXT")
TABLE_VERSION = 1


def _is_carboxyl_carbon(top: MolecularTopology, c: int) -> bool:
    nb = top.neighbors[c]
    oxy = [k for k in nb if top.atoms[k].element == "O"]
    return len(oxy) == 2 and len(nb) == 3


def atom_class_key(top: MolecularTopology, i: int) -> str:
    atom = top.atoms[i]
    nb = top.neighbors[i]
    nb_el = "".join(sorted(top.atoms[k].element for k in nb))
    name = atom.name
    if atom.element == "H" and len(nb) == 1:
        name = "H@" + top.atoms[nb[0]].name
    elif atom.element == "O" and len(nb) == 1:
        c = nb[0]
        if top.atoms[c].element == "C" and not _is_carboxyl_carbon(top, c):
            others = [k for k in top.neighbors[c] if top.atoms[k].element == "O" and k != i]
            if any(len(top.neighbors[k]) == 1 for k in others):
                name = "O@" + top.atoms[c].name
    return f"{atom.element}|{nb_el}|{name}"


@dataclass(frozen=True)
class AtomClassTable:
    """Ordered mapping from class key to one-hot index."""

    variant: str
    keys: tuple[str, ...]

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ContractViolation(f"unknown variant {self.variant!r}")
        if len(set(self.keys)) != len(self.keys):
            raise ContractViolation("duplicate class keys")

    def __len__(self):
        return len(self.keys)

    def index(self, key: str) -> int:
        try:
            return self._lookup[key]
        except KeyError:
            raise UnknownAtomClass(f"no class for key {key!r}") from None

    @property
    def _lookup(self):
        d = self.__dict__.get("_lookup_cache")
        if d is None:
            d = {k: i for i, k in enumerate(self.keys)}
            object.__setattr__(self, "_lookup_cache", d)
        return d

    def to_text(self) -> str:
        lines = [f"# tbg-class-table version={TABLE_VERSION} variant={self.variant} n={len(self.keys)}"]
        lines += [f"{i}\t{k}" for i, k in enumerate(self.keys)]
        return "\n".join(lines) + "\n"

    @property
    def content_hash(self) -> str:
        return hashlib.sha256(self.to_text().encode()).hexdigest()

    @classmethod
    def from_text(cls, text: str) -> "AtomClassTable":
        lines = text.splitlines()
        if not lines or not lines[0].startswith("# tbg-class-table"):
            raise ParseError("missing class-table header", line=1)
        fields = dict(f.split("=", 1) for f in lines[0].split()[2:])
        if int(fields.get("version", -1)) != TABLE_VERSION:
            raise VersionError(f"class table version {fields.get('version')} unsupported")
        keys = []
        for ln, line in enumerate(lines[1:], start=2):
            if not line.strip():
                continue
            try:
                idx, key = line.split("\t")
            except ValueError:
                raise ParseError(f"expected '<index>\\t<key>', got {line!r}", line=ln) from None
            if int(idx) != len(keys):
                raise ParseError(f"non-contiguous class index {idx}", line=ln)
            keys.append(key)
        if len(keys) != int(fields["n"]):
            raise ParseError(f"header declares {fields['n']} classes, found {len(keys)}")
        return cls(fields["variant"], tuple(keys))

    def save(self, path):
        from ..dataio.atomic import atomic_write_text

        atomic_write_text(path, self.to_text())

    @classmethod
    def load(cls, path) -> "AtomClassTable":
        with open(path) as fh:
            return cls.from_text(fh.read())


def generate_class_table(variant: str, corpus: Iterable[MolecularTopology] = ()) -> AtomClassTable:
    """Class table for ``variant``; ``tbg+full`` classes come from ``corpus``."""
    if variant == "tbg":
        return AtomClassTable(variant, ELEMENTS)
    if variant == "tbg+backbone":
        return AtomClassTable(variant, tuple("bb:" + n for n in BACKBONE_NAMES) + ELEMENTS)
    if variant == "tbg+full":
        keys = sorted({atom_class_key(top, i) for top in corpus for i in range(top.n_atoms)})
        return AtomClassTable(variant, tuple(keys))
    raise ContractViolation(f"unknown variant {variant!r}")


def embedding_width(table: AtomClassTable, n_positions: int = 2) -> int:
    if table.variant == "tbg+full":
        return len(table) + len(AMINO_ACIDS) + n_positions
    return len(table)


def _class_of(top: MolecularTopology, i: int, table: AtomClassTable) -> int:
    atom = top.atoms[i]
    if table.variant == "tbg":
        key = atom.element
    elif table.variant == "tbg+backbone":
        key = "bb:" + atom.name if atom.name in BACKBONE_NAMES else atom.element
    else:
        key = atom_class_key(top, i)
    try:
        return table.index(key)
    except UnknownAtomClass:
        raise UnknownAtomClass(
            f"atom {i} ({atom.name} in {atom.residue}{atom.residue_index}) of {top.name!r} "
            f"has no {table.variant} class (key {key!r})"
        ) from None


def build_embedding(top: MolecularTopology, table: AtomClassTable, n_positions: int = 2) -> np.ndarray:
    """One-hot embedding matrix of shape ``(n_atoms, embedding_width)``."""
    n_cls = len(table)
    width = embedding_width(table, n_positions)
    emb = np.zeros((top.n_atoms, width))
    first_res = min(a.residue_index for a in top.atoms)
    for i, atom in enumerate(top.atoms):
        emb[i, _class_of(top, i, table)] = 1.0
        if table.variant == "tbg+full":
            if atom.residue not in AMINO_ACIDS:
                raise UnknownAtomClass(f"atom {i} of {top.name!r}: residue {atom.residue!r} is not an amino acid")
            emb[i, n_cls + AMINO_ACIDS.index(atom.residue)] = 1.0
            pos = atom.residue_index - first_res
            if not 0 <= pos < n_positions:
                raise ContractViolation(f"residue position {pos} outside the {n_positions} embedded positions")
            emb[i, n_cls + len(AMINO_ACIDS) + pos] = 1.0
    return emb
