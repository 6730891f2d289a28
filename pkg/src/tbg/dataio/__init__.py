"""File formats and persistence."""
from .binfile import file_hash
from .checkpoint import Checkpoint, read_checkpoint, write_checkpoint
from .ensemble import ensemble_to_bytes, read_ensemble, write_ensemble
from .dataset import MoleculeData, TrajectoryDataset, load_manifest, make_dataset, write_manifest
from .textfmt import (
    Trajectory, read_topology, read_trajectory, topology_from_text, topology_hash,
    topology_to_text, trajectory_from_text, trajectory_to_text, write_topology, write_trajectory,
)

__all__ = [
    "file_hash", "ensemble_to_bytes", "read_ensemble", "write_ensemble", "Checkpoint", "read_checkpoint", "write_checkpoint",
    "MoleculeData", "TrajectoryDataset", "load_manifest", "make_dataset", "write_manifest",
    "Trajectory", "read_topology", "read_trajectory", "topology_from_text", "topology_hash",
    "topology_to_text", "trajectory_from_text", "trajectory_to_text", "write_topology", "write_trajectory",
]
