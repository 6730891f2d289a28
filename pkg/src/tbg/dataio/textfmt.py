"""Line-oriented text formats for topologies and trajectories.

Topology::

    # tbg-topology version=1
    name ala-ala
    dim 3
    atoms 2
    atom 0 N N ALA 1
    atom 1 C CA ALA 1
    bonds 1
    bond 0 1
    chiral 0
    end

Trajectory::

    # tbg-trajectory version=1
    topology ala-ala <sha256 of the topology text>
    units nm
    atoms 2
    dim 3
    frames 1
    bias no
    frame 0
    0.1 0.2 0.3
    ...
    end

With ``bias yes`` every ``frame`` line carries the per-frame bias weight.
Coordinates are written with 9 significant digits; the binary container
is the lossless path.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from ..errors import IntegrityError, ParseError, VersionError
from ..topology import Atom, ChiralCenter, MolecularTopology
from .atomic import atomic_write_text

__all__ = [
    "topology_to_text", "topology_from_text", "topology_hash", "write_topology", "read_topology",
    "Trajectory", "trajectory_to_text", "trajectory_from_text", "write_trajectory", "read_trajectory",
]

TOPOLOGY_VERSION = 1
TRAJECTORY_VERSION = 1


def topology_to_text(top: MolecularTopology) -> str:
    out = [f"# tbg-topology version={TOPOLOGY_VERSION}", f"name {top.name}", f"dim {top.dim}", f"atoms {top.n_atoms}"]
    for i, a in enumerate(top.atoms):
        out.append(f"atom {i} {a.element} {a.name} {a.residue} {a.residue_index}")
    out.append(f"bonds {len(top.bonds)}")
    out += [f"bond {i} {j}" for i, j in top.bonds]
    out.append(f"chiral {len(top.chiral_centers)}")
    for c in top.chiral_centers:
        out.append("chiral_center {} {} {} {} {} {:+d}".format(c.center, *c.substituents, c.sign))
    out.append("end")
    return "\n".join(out) + "\n"


def topology_hash(top: MolecularTopology) -> str:
    return hashlib.sha256(topology_to_text(top).encode()).hexdigest()


class _Lines:
    def __init__(self, text):
        self.lines = text.splitlines()
        self.pos = 0

    def next(self):
        while self.pos < len(self.lines):
            line = self.lines[self.pos]
            self.pos += 1
            if line.strip():
                return line.split(), self.pos
        raise IntegrityError("unexpected end of file")

    def expect(self, keyword, nargs=None):
        fields, ln = self.next()
        if fields[0] != keyword:
            raise ParseError(f"expected '{keyword}', found '{fields[0]}'", line=ln)
        if nargs is not None and len(fields) != nargs + 1:
            raise ParseError(f"'{keyword}' takes {nargs} fields, got {len(fields) - 1}", line=ln)
        return fields[1:], ln


def _header(text, kind, version):
    first = text.split("\n", 1)[0]
    if not first.startswith(f"# tbg-{kind}"):
        raise ParseError(f"missing tbg-{kind} header", line=1)
    try:
        fields = dict(f.split("=", 1) for f in first.split()[2:])
        found = int(fields["version"])
    except (KeyError, ValueError):
        raise ParseError("malformed header", line=1) from None
    if found != version:
        raise VersionError(f"{kind} format version {found} unsupported")


def _int(s, ln):
    try:
        return int(s)
    except ValueError:
        raise ParseError(f"expected an integer, got {s!r}", line=ln) from None


def _float(s, ln):
    try:
        return float(s)
    except ValueError:
        raise ParseError(f"expected a number, got {s!r}", line=ln) from None


def topology_from_text(text: str) -> MolecularTopology:
    _header(text, "topology", TOPOLOGY_VERSION)
    rd = _Lines(text)
    rd.pos = 1
    (name,), _ = rd.expect("name", 1)
    (dim,), ln = rd.expect("dim", 1)
    (n,), ln = rd.expect("atoms", 1)
    atoms = []
    for k in range(_int(n, ln)):
        f, ln = rd.expect("atom", 5)
        if _int(f[0], ln) != k:
            raise ParseError(f"atom index {f[0]} out of order (expected {k})", line=ln)
        atoms.append(Atom(f[1], f[2], f[3], _int(f[4], ln)))
    (nb,), ln = rd.expect("bonds", 1)
    bonds = []
    for _ in range(_int(nb, ln)):
        f, ln = rd.expect("bond", 2)
        bonds.append((_int(f[0], ln), _int(f[1], ln)))
    (nc,), ln = rd.expect("chiral", 1)
    centers = []
    for _ in range(_int(nc, ln)):
        f, ln = rd.expect("chiral_center", 6)
        v = [_int(s, ln) for s in f]
        centers.append(ChiralCenter(v[0], tuple(v[1:5]), v[5]))
    rd.expect("end", 0)
    return MolecularTopology(name, tuple(atoms), tuple(bonds), tuple(centers), dim=_int(dim, ln))


def write_topology(path, top: MolecularTopology) -> None:
    atomic_write_text(path, topology_to_text(top))


def read_topology(path) -> MolecularTopology:
    with open(path) as fh:
        return topology_from_text(fh.read())


@dataclass
class Trajectory:
    topology_name: str
    topology_hash: str
    frames: np.ndarray  # (F, N, D) in nm
    bias: np.ndarray | None = None
    units: str = "nm"

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=float)
        if self.frames.ndim != 3:
            raise ParseError(f"frames must be (F, N, D), got {self.frames.shape}")
        if self.bias is not None:
            self.bias = np.asarray(self.bias, dtype=float)
            if self.bias.shape != (len(self.frames),):
                raise ParseError("one bias weight per frame required")

    @classmethod
    def for_topology(cls, top: MolecularTopology, frames, bias=None):
        return cls(top.name, topology_hash(top), frames, bias)

    def __len__(self):
        return len(self.frames)

    def truncated(self, fraction: float) -> "Trajectory":
        k = int(round(len(self) * fraction))
        return Trajectory(self.topology_name, self.topology_hash, self.frames[:k],
                          None if self.bias is None else self.bias[:k], self.units)


def trajectory_to_text(traj: Trajectory) -> str:
    f, n, d = traj.frames.shape
    out = [
        f"# tbg-trajectory version={TRAJECTORY_VERSION}",
        f"topology {traj.topology_name} {traj.topology_hash}",
        f"units {traj.units}",
        f"atoms {n}",
        f"dim {d}",
        f"frames {f}",
        f"bias {'yes' if traj.bias is not None else 'no'}",
    ]
    for k in range(f):
        out.append(f"frame {k}" + (f" {traj.bias[k]:.17g}" if traj.bias is not None else ""))
        out += [" ".join(f"{c:.9g}" for c in row) for row in traj.frames[k]]
    out.append("end")
    return "\n".join(out) + "\n"


def trajectory_from_text(text: str, topology: MolecularTopology | None = None) -> Trajectory:
    _header(text, "trajectory", TRAJECTORY_VERSION)
    rd = _Lines(text)
    rd.pos = 1
    (tname, thash), _ = rd.expect("topology", 2)
    (units,), _ = rd.expect("units", 1)
    (n,), ln = rd.expect("atoms", 1)
    n = _int(n, ln)
    (d,), ln = rd.expect("dim", 1)
    d = _int(d, ln)
    (nf,), ln = rd.expect("frames", 1)
    nf = _int(nf, ln)
    (has_bias,), ln = rd.expect("bias", 1)
    if has_bias not in ("yes", "no"):
        raise ParseError("bias must be 'yes' or 'no'", line=ln)
    if topology is not None:
        if thash != topology_hash(topology):
            raise IntegrityError(f"trajectory was written for a different topology than {topology.name!r}")
        if n != topology.n_atoms:
            raise IntegrityError("atom count disagrees with topology")
    frames = np.empty((nf, n, d))
    bias = np.empty(nf) if has_bias == "yes" else None
    for k in range(nf):
        fields, ln = rd.next()
        if fields[0] != "frame":
            raise IntegrityError(f"frame {k} missing (found '{fields[0]}'; declared {nf} frames)")
        if _int(fields[1], ln) != k:
            raise ParseError(f"frame index {fields[1]} out of order", line=ln)
        if bias is not None:
            if len(fields) != 3:
                raise ParseError("frame line lacks its bias weight", line=ln)
            bias[k] = _float(fields[2], ln)
        for i in range(n):
            row, ln = rd.next()
            if row[0] in ("frame", "end"):
                raise IntegrityError(f"frame {k} has {i} of {n} coordinate rows")
            if len(row) != d:
                raise ParseError(f"expected {d} coordinates, got {len(row)}", line=ln)
            frames[k, i] = [_float(s, ln) for s in row]
    fields, ln = rd.next()
    if fields[0] != "end":
        raise IntegrityError(f"content continues past the declared {nf} frames", )
    return Trajectory(tname, thash, frames, bias, units)


def write_trajectory(path, traj: Trajectory) -> None:
    atomic_write_text(path, trajectory_to_text(traj))


def read_trajectory(path, topology: MolecularTopology | None = None) -> Trajectory:
    with open(path) as fh:
        return trajectory_from_text(fh.read(), topology)
