"""Training datasets: frames grouped per molecule, split by molecule."""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigError, IntegrityError
from ..topology import MolecularTopology
from .atomic import atomic_write_text
from .textfmt import Trajectory, read_topology, read_trajectory, topology_hash

__all__ = ["MoleculeData", "TrajectoryDataset", "make_dataset", "write_manifest", "load_manifest"]


@dataclass
class MoleculeData:
    topology: MolecularTopology
    frames: np.ndarray  # (F, N, D), nm
    bias: np.ndarray | None = None
    split: str = "train"

    @property
    def name(self) -> str:
        return self.topology.name

    def __len__(self):
        return len(self.frames)


@dataclass
class TrajectoryDataset:
    molecules: list[MoleculeData] = field(default_factory=list)

    def __len__(self):
        return len(self.molecules)

    def subset(self, split: str) -> "TrajectoryDataset":
        return TrajectoryDataset([m for m in self.molecules if m.split == split])

    def names(self, split: str | None = None) -> list[str]:
        return [m.name for m in self.molecules if split is None or m.split == split]

    def __getitem__(self, name: str) -> MoleculeData:
        for m in self.molecules:
            if m.name == name:
                return m
        raise KeyError(name)


def make_dataset(molecules, test: list[str] = (), train: list[str] | None = None,
                 truncation: float = 1.0) -> TrajectoryDataset:
    """Assemble ``(topology, trajectory)`` pairs into a split dataset.

    Molecules named in ``test`` form the test split, the rest (or those in
    ``train`` when given) the training split.  ``truncation`` keeps the
    leading fraction of every trajectory.
    """
    if not 0.0 < truncation <= 1.0:
        raise ConfigError("truncation must lie in (0, 1]")
    test = set(test)
    train_set = None if train is None else set(train)
    if train_set is not None and train_set & test:
        raise ConfigError(f"molecules in both splits: {sorted(train_set & test)}")
    out = []
    seen = set()
    for top, traj in molecules:
        if top.name in seen:
            raise ConfigError(f"duplicate molecule {top.name!r}")
        seen.add(top.name)
        if traj.topology_hash != topology_hash(top):
            raise IntegrityError(f"trajectory for {top.name!r} does not match its topology")
        traj = traj.truncated(truncation) if truncation < 1.0 else traj
        if top.name in test:
            split = "test"
        elif train_set is None or top.name in train_set:
            split = "train"
        else:
            continue
        out.append(MoleculeData(top, traj.frames, traj.bias, split))
    return TrajectoryDataset(out)


def write_manifest(path, entries: list[dict], truncation: float = 1.0) -> None:
    """``entries``: ``{"topology": path, "trajectory": path, "split": ...}``."""
    doc = {"format": "tbg-dataset", "version": 1, "truncation": truncation, "molecules": entries}
    atomic_write_text(path, json.dumps(doc, indent=2, sort_keys=True) + "\n")


def load_manifest(path) -> TrajectoryDataset:
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("format") != "tbg-dataset":
        raise ConfigError(f"{path} is not a dataset manifest")
    base = os.path.dirname(os.path.abspath(path))
    pairs, test, train = [], [], []
    for e in doc["molecules"]:
        top = read_topology(os.path.join(base, e["topology"]))
        traj = read_trajectory(os.path.join(base, e["trajectory"]), top)
        pairs.append((top, traj))
        (test if e.get("split", "train") == "test" else train).append(top.name)
    return make_dataset(pairs, test=test, train=train, truncation=float(doc.get("truncation", 1.0)))
