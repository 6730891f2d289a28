"""Boltzmann targets: analytic benchmarks and toy molecular force fields."""
from .analytic import (
    DoubleWell, GaussianMixture, ParticleTarget, double_well_target, gmm_fixture, gmm_target, helmert_basis,
)
from .base import DEFAULT_CAP, BoltzmannTarget
from .forcefield import ForceFieldTarget, ToyForceField, forcefield_from_text, forcefield_to_text, nonbonded_pairs
from .sampling import McmcConfig, McmcStats, metropolis, reference_sampler, rotate_about_bond
from .registry import TARGET_NAMES, Coordinate, canonical_spec, resolve_target, target_coordinates
from .molecules import (
    RESIDUES, backbone_torsions, build_dipeptide, chiral_torsion_target, dipeptide_target, rotatable_bonds,
    torsion_profile,
)

__all__ = [
    "DoubleWell", "GaussianMixture", "ParticleTarget", "double_well_target", "gmm_fixture", "gmm_target",
    "helmert_basis", "DEFAULT_CAP", "BoltzmannTarget", "ForceFieldTarget", "ToyForceField",
    "forcefield_from_text", "forcefield_to_text", "nonbonded_pairs", "RESIDUES", "backbone_torsions",
    "build_dipeptide", "chiral_torsion_target", "dipeptide_target", "rotatable_bonds", "torsion_profile",
    "McmcConfig", "McmcStats", "metropolis", "reference_sampler", "rotate_about_bond",
    "TARGET_NAMES", "Coordinate", "canonical_spec", "resolve_target", "target_coordinates",
]
