"""A small classical force field in reduced units (nm, k_B T).

    U = sum_bonds   k/2 (r - r0)^2
      + sum_angles  k/2 (theta - theta0)^2
      + sum_torsion k (1 + cos(n phi - delta))
      + sum_chiral  k (V / V0 - 1)^2
      + sum_pairs   s 4 eps [(sig/r)^12 - (sig/r)^6]

``V`` is the signed volume spanned by a chiral centre's four substituents,
so the mirror image of a restrained centre costs ``4 k``.  Nonbonded pairs
are all pairs more than two bonds apart; 1-4 pairs carry the scale ``s``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ContractViolation, ParseError, VersionError
from ..geometry import bond_angles, dihedrals, distances, signed_volumes
from ..numcore import ops
from ..topology import MolecularTopology
from .base import DEFAULT_CAP, BoltzmannTarget

__all__ = ["ToyForceField", "ForceFieldTarget", "LJ_PARAMS", "nonbonded_pairs", "forcefield_to_text", "forcefield_from_text"]

FORMAT_VERSION = 1

# (sigma nm, epsilon k_B T) per element; Lorentz-Berthelot mixing
LJ_PARAMS = {
    "H": (0.18, 0.05),
    "C": (0.30, 0.10),
    "N": (0.28, 0.10),
    "O": (0.27, 0.10),
    "S": (0.32, 0.15),
}


def _arr(a, width, dtype=float):
    a = np.asarray(a, dtype=dtype)
    return a.reshape(-1, width) if width > 1 else a.reshape(-1)


@dataclass
class ToyForceField:
    n_atoms: int
    bond_idx: np.ndarray = field(default_factory=lambda: np.zeros((0, 2), int))
    bond_r0: np.ndarray = field(default_factory=lambda: np.zeros(0))
    bond_k: np.ndarray = field(default_factory=lambda: np.zeros(0))
    angle_idx: np.ndarray = field(default_factory=lambda: np.zeros((0, 3), int))
    angle_theta0: np.ndarray = field(default_factory=lambda: np.zeros(0))
    angle_k: np.ndarray = field(default_factory=lambda: np.zeros(0))
    torsion_idx: np.ndarray = field(default_factory=lambda: np.zeros((0, 4), int))
    torsion_n: np.ndarray = field(default_factory=lambda: np.zeros(0))
    torsion_phase: np.ndarray = field(default_factory=lambda: np.zeros(0))
    torsion_k: np.ndarray = field(default_factory=lambda: np.zeros(0))
    chiral_idx: np.ndarray = field(default_factory=lambda: np.zeros((0, 4), int))
    chiral_v0: np.ndarray = field(default_factory=lambda: np.zeros(0))
    chiral_k: np.ndarray = field(default_factory=lambda: np.zeros(0))
    pair_idx: np.ndarray = field(default_factory=lambda: np.zeros((0, 2), int))
    pair_sigma: np.ndarray = field(default_factory=lambda: np.zeros(0))
    pair_eps: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        self.bond_idx = _arr(self.bond_idx, 2, int)
        self.angle_idx = _arr(self.angle_idx, 3, int)
        self.torsion_idx = _arr(self.torsion_idx, 4, int)
        self.chiral_idx = _arr(self.chiral_idx, 4, int)
        self.pair_idx = _arr(self.pair_idx, 2, int)
        for name in ("bond_r0", "bond_k", "angle_theta0", "angle_k", "torsion_n", "torsion_phase",
                     "torsion_k", "chiral_v0", "chiral_k", "pair_sigma", "pair_eps"):
            setattr(self, name, _arr(getattr(self, name), 1))
        for kind, idx, params in (
            ("bond", self.bond_idx, (self.bond_r0, self.bond_k)),
            ("angle", self.angle_idx, (self.angle_theta0, self.angle_k)),
            ("torsion", self.torsion_idx, (self.torsion_n, self.torsion_phase, self.torsion_k)),
            ("chiral", self.chiral_idx, (self.chiral_v0, self.chiral_k)),
            ("pair", self.pair_idx, (self.pair_sigma, self.pair_eps)),
        ):
            if idx.size and (idx.min() < 0 or idx.max() >= self.n_atoms):
                raise ContractViolation(f"{kind} term references an atom outside 0..{self.n_atoms - 1}")
            if any(len(p) != len(idx) for p in params):
                raise ContractViolation(f"{kind} parameter arrays disagree with the index list")
        if np.any(self.chiral_v0 == 0):
            raise ContractViolation("chiral reference volume must be non-zero")

    # energy terms ----------------------------------------------------
    def terms(self, x) -> dict:
        """Per-kind energies, each of shape ``x.shape[:-2]``."""
        out = {}
        lead = x.shape[:-2]
        zero = np.zeros(lead)
        if len(self.bond_idx):
            d = distances(x, self.bond_idx) - self.bond_r0
            out["bond"] = (0.5 * self.bond_k * d * d).sum(axis=-1)
        else:
            out["bond"] = zero
        if len(self.angle_idx):
            d = bond_angles(x, self.angle_idx) - self.angle_theta0
            out["angle"] = (0.5 * self.angle_k * d * d).sum(axis=-1)
        else:
            out["angle"] = zero
        if len(self.torsion_idx):
            phi = dihedrals(x, self.torsion_idx)
            out["torsion"] = (self.torsion_k * (1.0 + ops.cos(phi * self.torsion_n - self.torsion_phase))).sum(axis=-1)
        else:
            out["torsion"] = zero
        if len(self.chiral_idx):
            q = signed_volumes(x, self.chiral_idx) * (1.0 / self.chiral_v0) - 1.0
            out["chiral"] = (self.chiral_k * q * q).sum(axis=-1)
        else:
            out["chiral"] = zero
        if len(self.pair_idx):
            r = distances(x, self.pair_idx)
            s2 = (self.pair_sigma * self.pair_sigma) / (r * r)
            s6 = s2 * s2 * s2
            out["nonbonded"] = (4.0 * self.pair_eps * (s6 * s6 - s6)).sum(axis=-1)
        else:
            out["nonbonded"] = zero
        return out

    def potential(self, x):
        t = self.terms(x)
        return t["bond"] + t["angle"] + t["torsion"] + t["chiral"] + t["nonbonded"]


def nonbonded_pairs(top: MolecularTopology, scale14: float = 0.5, params=None):
    """Pairs more than two bonds apart with mixed LJ parameters."""
    params = params or LJ_PARAMS
    gd = top.graph_distances()
    idx, sig, eps = [], [], []
    for i in range(top.n_atoms):
        for j in range(i + 1, top.n_atoms):
            if gd[i, j] <= 2:
                continue
            si, ei = params[top.atoms[i].element]
            sj, ej = params[top.atoms[j].element]
            idx.append((i, j))
            sig.append(0.5 * (si + sj))
            eps.append(np.sqrt(ei * ej) * (scale14 if gd[i, j] == 3 else 1.0))
    return np.array(idx, dtype=int).reshape(-1, 2), np.array(sig), np.array(eps)


class ForceFieldTarget(BoltzmannTarget):
    """Molecular target: a topology, its force field and a rest geometry."""

    def __init__(self, topology: MolecularTopology, ff: ToyForceField, rest: np.ndarray | None = None,
                 temperature: float = 1.0, cap: float = DEFAULT_CAP, rotatable=()):
        super().__init__(temperature, cap)
        if ff.n_atoms != topology.n_atoms:
            raise ContractViolation("force field and topology disagree on the atom count")
        self.topology = topology
        self.ff = ff
        self.name = topology.name
        self.event_shape = (topology.n_atoms, topology.dim)
        self.rest = None if rest is None else np.asarray(rest, dtype=float)
        # (j, k, moving atoms): rotations about bond j-k that move only ``moving``
        self.rotatable = tuple(rotatable)

    def potential(self, x):
        return self.ff.potential(x)

    def terms(self, x):
        return {k: np.asarray(v) / self.temperature for k, v in self.ff.terms(np.asarray(x, dtype=float)).items()}

    def initial_state(self):
        if self.rest is None:
            raise ContractViolation(f"{self.name} has no rest geometry")
        return self.rest.copy()


# text format ----------------------------------------------------------

def forcefield_to_text(ff: ToyForceField, name: str = "forcefield") -> str:
    g = "{:.17g}".format
    out = [f"# tbg-forcefield version={FORMAT_VERSION}", f"name {name}", f"atoms {ff.n_atoms}"]
    out += [f"bond {i} {j} {g(r)} {g(k)}" for (i, j), r, k in zip(ff.bond_idx, ff.bond_r0, ff.bond_k)]
    out += [f"angle {i} {j} {k} {g(t)} {g(kk)}" for (i, j, k), t, kk in zip(ff.angle_idx, ff.angle_theta0, ff.angle_k)]
    out += [
        f"torsion {i} {j} {k} {l} {g(n)} {g(p)} {g(kk)}"
        for (i, j, k, l), n, p, kk in zip(ff.torsion_idx, ff.torsion_n, ff.torsion_phase, ff.torsion_k)
    ]
    out += [f"chiral {a} {b} {c} {d} {g(v)} {g(k)}" for (a, b, c, d), v, k in zip(ff.chiral_idx, ff.chiral_v0, ff.chiral_k)]
    out += [f"pair {i} {j} {g(s)} {g(e)}" for (i, j), s, e in zip(ff.pair_idx, ff.pair_sigma, ff.pair_eps)]
    out.append("end")
    return "\n".join(out) + "\n"


_LAYOUT = {"bond": (2, 2), "angle": (3, 2), "torsion": (4, 3), "chiral": (4, 2), "pair": (2, 2)}


def forcefield_from_text(text: str) -> tuple[str, ToyForceField]:
    lines = text.splitlines()
    if not lines or not lines[0].startswith("# tbg-forcefield"):
        raise ParseError("missing tbg-forcefield header", line=1)
    try:
        version = int(dict(f.split("=", 1) for f in lines[0].split()[2:])["version"])
    except (KeyError, ValueError):
        raise ParseError("malformed header", line=1) from None
    if version != FORMAT_VERSION:
        raise VersionError(f"force-field format version {version} unsupported")
    name, n_atoms = None, None
    rows = {k: ([], []) for k in _LAYOUT}
    ended = False
    for ln, line in enumerate(lines[1:], start=2):
        f = line.split()
        if not f:
            continue
        if ended:
            raise ParseError("content after 'end'", line=ln)
        key = f[0]
        if key == "name":
            name = f[1]
        elif key == "atoms":
            n_atoms = int(f[1])
        elif key == "end":
            ended = True
        elif key in _LAYOUT:
            ni, npar = _LAYOUT[key]
            if len(f) != 1 + ni + npar:
                raise ParseError(f"'{key}' takes {ni + npar} fields, got {len(f) - 1}", line=ln)
            try:
                rows[key][0].append([int(s) for s in f[1 : 1 + ni]])
                rows[key][1].append([float(s) for s in f[1 + ni :]])
            except ValueError:
                raise ParseError(f"bad number in '{key}' record", line=ln) from None
        else:
            raise ParseError(f"unknown record '{key}'", line=ln)
    if not ended:
        raise ParseError("missing 'end'")
    if n_atoms is None:
        raise ParseError("missing 'atoms' record")

    def cols(key):
        idx, par = rows[key]
        ni, npar = _LAYOUT[key]
        return np.array(idx, dtype=int).reshape(-1, ni), np.array(par, dtype=float).reshape(-1, npar)

    bi, bp = cols("bond")
    ai, ap = cols("angle")
    ti, tp = cols("torsion")
    ci, cp = cols("chiral")
    pi_, pp = cols("pair")
    ff = ToyForceField(
        n_atoms, bi, bp[:, 0], bp[:, 1], ai, ap[:, 0], ap[:, 1], ti, tp[:, 0], tp[:, 1], tp[:, 2],
        ci, cp[:, 0], cp[:, 1], pi_, pp[:, 0], pp[:, 1],
    )
    return name, ff
