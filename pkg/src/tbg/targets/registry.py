"""Named targets and their collective coordinates.

A target spec is a string (``"gmm2d"``, ``"double-well"``,
``"chiral-torsion"``, ``"dipeptide:ALA-SER"``) or a mapping
``{"name": ..., **options}`` whose options go to the constructor.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from ..errors import ConfigError
from .analytic import ParticleTarget, double_well_target, gmm_fixture
from .base import BoltzmannTarget
from .molecules import RESIDUES, backbone_torsions, chiral_torsion_target, dipeptide_target

__all__ = ["Coordinate", "resolve_target", "target_coordinates", "canonical_spec", "TARGET_NAMES"]

TARGET_NAMES = ("gmm2d", "double-well", "chiral-torsion", "dipeptide:<RES>-<RES>")


@dataclass(frozen=True)
class Coordinate:
    """A scalar observable; ``boundary`` splits it into two states."""

    name: str
    fn: Callable[[np.ndarray], np.ndarray]
    periodic: bool = False
    boundary: float = 0.0


def canonical_spec(spec) -> dict:
    if isinstance(spec, str):
        return {"name": spec}
    if isinstance(spec, dict) and isinstance(spec.get("name"), str):
        return dict(spec)
    raise ConfigError(f"target must be a name or an object with a 'name', got {spec!r}")


def _double_well(**kw):
    return ParticleTarget(double_well_target(**kw), 2, 1, elements=["C", "O"], name="double-well")


def resolve_target(spec) -> BoltzmannTarget:
    spec = canonical_spec(spec)
    name = spec.pop("name")
    try:
        if name == "gmm2d":
            return gmm_fixture(**spec)
        if name == "double-well":
            return _double_well(**spec)
        if name == "chiral-torsion":
            return chiral_torsion_target(**spec)
        if name.startswith("dipeptide:"):
            seq = tuple(name.split(":", 1)[1].upper().split("-"))
            if len(seq) != 2 or any(r not in RESIDUES for r in seq):
                raise ConfigError(f"dipeptide targets take two of {RESIDUES}, got {name!r}")
            return dipeptide_target(seq, **spec)
    except TypeError as exc:
        raise ConfigError(f"bad options for target {name!r}: {exc}") from None
    raise ConfigError(f"unknown target {name!r}; known: {', '.join(TARGET_NAMES)}")


def _dihedral(quad):
    from ..molkit import torsion

    return lambda x: torsion(x, *quad)


def target_coordinates(target: BoltzmannTarget) -> dict[str, Coordinate]:
    """The observables analysed by default for ``target``."""
    if isinstance(target, ParticleTarget):
        d = target.base.event_shape[0]
        return {
            f"y{k}": Coordinate(f"y{k}", lambda x, k=k: target.to_flat(np.asarray(x))[..., k])
            for k in range(d)
        }
    torsion = getattr(target, "torsion", None)
    if torsion is not None:
        return {"phi": Coordinate("phi", _dihedral(torsion), periodic=True)}
    top = target.topology
    if _has_backbone(top):
        tor = backbone_torsions(top)
        return {k: Coordinate(k, _dihedral(tor[k]), periodic=True) for k in ("phi", "psi")}
    return {}


def _has_backbone(top) -> bool:
    if top is None:
        return False
    try:
        backbone_torsions(top)
    except KeyError:
        return False
    return True
