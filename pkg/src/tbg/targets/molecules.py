"""Toy molecules built from internal coordinates.

Dipeptides are united-atom chains (no hydrogens on carbons except the
alpha hydrogen, one amide hydrogen) with two soft backbone torsions,
``phi = C1-N2-CA2-C2`` and ``psi = N1-CA1-C1-N2``, a stiff trans peptide
bond and a chirality restraint on every alpha carbon that carries a side
chain.  Rest bond lengths and angles are measured on the built geometry,
so the bonded energy vanishes there.

The chiral torsion molecule is a six-atom branched chain whose only
flexible coordinate is one dihedral ``C1-C2-C3-O``; with no nonbonded
terms its marginal is exactly ``exp(-U_torsion(phi))``.
"""
from __future__ import annotations

import numpy as np

from ..errors import ContractViolation
from ..geometry import bond_angles, dihedrals, place_atom, signed_volumes
from ..topology import Atom, ChiralCenter, MolecularTopology
from .forcefield import ForceFieldTarget, ToyForceField, nonbonded_pairs

__all__ = [
    "RESIDUES", "build_dipeptide", "dipeptide_target", "backbone_torsions",
    "chiral_torsion_target", "torsion_profile", "rotatable_bonds",
]

BOND_K = 2.0e4  # k_B T / nm^2
ANGLE_K = 80.0  # k_B T / rad^2
CHIRAL_K = 25.0
OMEGA_K = 10.0

# side chains: (name, element, parent, (angle ref, dihedral ref), bond nm, angle deg, dihedral deg)
_SIDE = {
    "ALA": [("CB", "C", "CA", ("N", "C"), 0.153, 110.5, -122.5), ("HA", "H", "CA", ("N", "C"), 0.109, 109.0, 118.0)],
    "SER": [("CB", "C", "CA", ("N", "C"), 0.153, 110.5, -122.5), ("HA", "H", "CA", ("N", "C"), 0.109, 109.0, 118.0),
            ("OG", "O", "CB", ("CA", "N"), 0.142, 111.0, -60.0)],
    "CYS": [("CB", "C", "CA", ("N", "C"), 0.153, 110.5, -122.5), ("HA", "H", "CA", ("N", "C"), 0.109, 109.0, 118.0),
            ("SG", "S", "CB", ("CA", "N"), 0.181, 114.0, -60.0)],
    "GLY": [("HA2", "H", "CA", ("N", "C"), 0.109, 109.0, -120.0), ("HA3", "H", "CA", ("N", "C"), 0.109, 109.0, 120.0)],
}
RESIDUES = tuple(_SIDE)

# backbone torsion parameters per residue: list of (n, phase, k)
_PHI = {
    "ALA": [(1, -1.3 + np.pi, 1.2), (2, np.pi / 2, 1.0)],
    "SER": [(1, -1.1 + np.pi, 0.9), (2, np.pi / 2, 1.2)],
    "CYS": [(1, -1.2 + np.pi, 1.0), (2, np.pi / 2, 1.1)],
    "GLY": [(2, np.pi / 2, 0.8)],
}
_PSI = {
    "ALA": [(1, 2.4 + np.pi, 1.0), (2, 0.0, 0.8)],
    "SER": [(1, 2.2 + np.pi, 0.7), (2, 0.0, 1.1)],
    "CYS": [(1, 2.3 + np.pi, 0.8), (2, 0.0, 1.0)],
    "GLY": [(2, 0.0, 0.6)],
}
_CHI = [(3, 0.0, 0.8)]


def build_dipeptide(seq, phi: float = -1.4, psi: float = 2.4):
    """Topology and rest coordinates (nm) for a two-residue sequence."""
    seq = tuple(seq)
    if len(seq) != 2 or any(r not in _SIDE for r in seq):
        raise ContractViolation(f"dipeptides are built from {RESIDUES}, got {seq}")
    r1, r2 = seq
    deg = np.deg2rad
    pos: dict[tuple[str, int], np.ndarray] = {}
    order: list[tuple[str, str, int, str]] = []  # (name, element, residue index, residue)
    parent: dict[tuple[str, int], tuple[str, int]] = {}

    def add(name, el, res, coord, bonded_to=None):
        pos[(name, res)] = coord
        order.append((name, el, res, seq[res - 1]))
        if bonded_to is not None:
            parent[(name, res)] = bonded_to

    def z(name, el, res, c, b, a, bond, angle, tors):
        add(name, el, res, place_atom(pos[a], pos[b], pos[c], bond, deg(angle), tors), c)

    add("N", "N", 1, np.zeros(3))
    add("CA", "C", 1, np.array([0.146, 0.0, 0.0]), ("N", 1))
    t = deg(111.0)
    add("C", "C", 1, pos[("CA", 1)] + 0.152 * np.array([-np.cos(t), np.sin(t), 0.0]), ("CA", 1))
    for name, el, par, (ra, rd), bond, ang, dih in _SIDE[r1]:
        z(name, el, 1, (par, 1), (ra, 1), (rd, 1), bond, ang, deg(dih))
    z("O", "O", 1, ("C", 1), ("CA", 1), ("N", 1), 0.123, 121.0, psi + np.pi)
    z("N", "N", 2, ("C", 1), ("CA", 1), ("N", 1), 0.133, 116.0, psi)
    z("H", "H", 2, ("N", 2), ("C", 1), ("CA", 1), 0.101, 119.0, 0.0)
    z("CA", "C", 2, ("N", 2), ("C", 1), ("CA", 1), 0.146, 122.0, np.pi)
    z("C", "C", 2, ("CA", 2), ("N", 2), ("C", 1), 0.152, 111.0, phi)
    for name, el, par, (ra, rd), bond, ang, dih in _SIDE[r2]:
        z(name, el, 2, (par, 2), (ra, 2), (rd, 2), bond, ang, deg(dih))
    z("O", "O", 2, ("C", 2), ("CA", 2), ("N", 2), 0.125, 117.0, -0.5)
    z("OXT", "O", 2, ("C", 2), ("CA", 2), ("N", 2), 0.125, 117.0, np.pi - 0.5)

    keys = [(n, r) for n, _, r, _ in order]
    index = {k: i for i, k in enumerate(keys)}
    atoms = tuple(Atom(el, n, res, r) for n, el, r, res in order)
    bonds = tuple(sorted((min(index[k], index[p]), max(index[k], index[p])) for k, p in parent.items()))
    x = np.array([pos[k] for k in keys])
    centers = []
    for r, res in ((1, r1), (2, r2)):
        if res == "GLY":
            continue
        quad = tuple(index[(n, r)] for n in ("N", "C", "CB", "HA"))
        v = signed_volumes(x, quad)[0]
        centers.append(ChiralCenter(index[("CA", r)], quad, int(np.sign(v))))
    top = MolecularTopology(f"{r1}-{r2}", atoms, bonds, tuple(centers))
    return top, x - x.mean(axis=0)


def _angle_triples(top):
    out = []
    for j in range(top.n_atoms):
        nb = top.neighbors[j]
        for a in range(len(nb)):
            for b in range(a + 1, len(nb)):
                out.append((nb[a], j, nb[b]))
    return np.array(out, dtype=int).reshape(-1, 3)


def rotatable_bonds(top: MolecularTopology, pairs) -> tuple:
    """``(j, k, moving)`` for each bond ``j-k``: ``moving`` are the atoms on
    ``k``'s side, the ones a rotation about the bond displaces."""
    out = []
    for j, k in pairs:
        seen = {k}
        stack = [k]
        while stack:
            u = stack.pop()
            for w in top.neighbors[u]:
                if w not in seen and not (u == k and w == j):
                    seen.add(w)
                    stack.append(w)
        if j in seen:
            raise ContractViolation(f"bond {j}-{k} lies in a ring")
        seen.discard(k)
        out.append((j, k, np.array(sorted(seen), dtype=int)))
    return tuple(out)


def backbone_torsions(top: MolecularTopology) -> dict[str, tuple[int, int, int, int]]:
    ix = top.index
    return {
        "phi": (ix("C", 1), ix("N", 2), ix("CA", 2), ix("C", 2)),
        "psi": (ix("N", 1), ix("CA", 1), ix("C", 1), ix("N", 2)),
        "omega": (ix("CA", 1), ix("C", 1), ix("N", 2), ix("CA", 2)),
    }


def dipeptide_target(seq, temperature: float = 1.0) -> ForceFieldTarget:
    top, x = build_dipeptide(seq)
    r1, r2 = top.sequence
    ix = top.index
    bonds = np.array(top.bonds, dtype=int)
    angles = _angle_triples(top)
    tor = backbone_torsions(top)
    t_idx, t_n, t_ph, t_k = [], [], [], []

    def torsion(quad, terms):
        for n, ph, k in terms:
            t_idx.append(quad)
            t_n.append(n)
            t_ph.append(ph)
            t_k.append(k)

    torsion(tor["omega"], [(1, 0.0, OMEGA_K)])
    torsion(tor["phi"], _PHI[r2])
    torsion(tor["psi"], _PSI[r1])
    for r, res in ((1, r1), (2, r2)):
        side = [a[0] for a in _SIDE[res]]
        for g in ("OG", "SG"):
            if g in side:
                torsion((ix("N", r), ix("CA", r), ix("CB", r), ix(g, r)), _CHI)
    ch = np.array([c.substituents for c in top.chiral_centers], dtype=int).reshape(-1, 4)
    pidx, psig, peps = nonbonded_pairs(top)
    ff = ToyForceField(
        top.n_atoms,
        bonds, np.asarray(np.linalg.norm(x[bonds[:, 0]] - x[bonds[:, 1]], axis=1)), np.full(len(bonds), BOND_K),
        angles, np.asarray(bond_angles(x, angles)), np.full(len(angles), ANGLE_K),
        np.array(t_idx), np.array(t_n, float), np.array(t_ph), np.array(t_k),
        ch, np.asarray(signed_volumes(x, ch)) if len(ch) else np.zeros(0), np.full(len(ch), CHIRAL_K),
        pidx, psig, peps,
    )
    rot_pairs = [(ix("CA", 1), ix("C", 1)), (ix("N", 2), ix("CA", 2))]
    for r, res in ((1, r1), (2, r2)):
        if res in ("SER", "CYS"):
            rot_pairs.append((ix("CA", r), ix("CB", r)))
    return ForceFieldTarget(top, ff, x, temperature, rotatable=rotatable_bonds(top, rot_pairs))


def torsion_profile(phi, barrier: float, asymmetry: float):
    """``U(phi) = barrier/2 (1 + cos 2 phi) + asymmetry (1 + sin phi)``."""
    phi = np.asarray(phi, dtype=float)
    return 0.5 * barrier * (1.0 + np.cos(2.0 * phi)) + asymmetry * (1.0 + np.sin(phi))


def chiral_torsion_target(barrier: float = 5.0, asymmetry: float = 1.0, temperature: float = 1.0) -> ForceFieldTarget:
    """Six atoms ``C1-C2-C3(O)(N)(H)``; ``C3`` is a restrained chiral centre
    and ``phi = C1-C2-C3-O`` carries :func:`torsion_profile`.

    Wells sit at ``phi = +-pi/2``; the positive one is ``2 asymmetry``
    higher.  Nothing else depends on ``phi``, so its marginal density is
    ``exp(-torsion_profile / T)`` up to normalisation.
    """
    deg = np.deg2rad
    p = {}
    p["C3"] = np.zeros(3)
    p["C2"] = np.array([0.153, 0.0, 0.0])
    t = deg(109.5)
    p["O"] = 0.143 * np.array([np.cos(np.pi - t) * -1.0, np.sin(t), 0.0])
    p["C1"] = place_atom(p["O"], p["C3"], p["C2"], 0.153, deg(111.0), -np.pi / 2)
    p["N"] = place_atom(p["O"], p["C2"], p["C3"], 0.147, deg(109.5), deg(120.0))
    p["H"] = place_atom(p["O"], p["C2"], p["C3"], 0.109, deg(109.5), deg(-120.0))
    names = ["C1", "C2", "C3", "O", "N", "H"]
    els = ["C", "C", "C", "O", "N", "H"]
    atoms = tuple(Atom(e, n, "UNK", 1) for n, e in zip(names, els))
    bonds = ((0, 1), (1, 2), (2, 3), (2, 4), (2, 5))
    x = np.array([p[n] for n in names])
    quad = (1, 3, 4, 5)
    v0 = signed_volumes(x, quad)[0]
    top = MolecularTopology("chiral-torsion", atoms, bonds, (ChiralCenter(2, quad, int(np.sign(v0))),))
    b = np.array(bonds)
    angles = _angle_triples(top)
    ff = ToyForceField(
        6,
        b, np.linalg.norm(x[b[:, 0]] - x[b[:, 1]], axis=1), np.full(len(b), BOND_K),
        angles, np.asarray(bond_angles(x, angles)), np.full(len(angles), ANGLE_K),
        np.array([(0, 1, 2, 3), (0, 1, 2, 3)]), np.array([2.0, 1.0]), np.array([0.0, np.pi / 2]),
        np.array([0.5 * barrier, asymmetry]),
        np.array([quad]), np.array([v0]), np.array([CHIRAL_K]),
    )
    target = ForceFieldTarget(top, ff, x - x.mean(axis=0), temperature, rotatable=rotatable_bonds(top, [(2, 1)]))
    target.torsion = (0, 1, 2, 3)
    target.torsion_params = (barrier, asymmetry)
    return target
