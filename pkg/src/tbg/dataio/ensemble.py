"""Weighted ensembles in the binary container (lossless, hash-checked)."""
from __future__ import annotations

import numpy as np

from . import binfile

__all__ = ["write_ensemble", "read_ensemble", "ensemble_to_bytes"]


def _parts(ens):
    arrays = {
        "samples": ens.samples,
        "model_logp": ens.model_logp,
        "energies": ens.energies,
        "valid": ens.valid.astype(np.uint8),
    }
    if ens.log_weights is not None:
        arrays["log_weights"] = ens.log_weights
    return {"provenance": ens.provenance, "n": len(ens)}, arrays


def ensemble_to_bytes(ens) -> bytes:
    meta, arrays = _parts(ens)
    return binfile.encode("ensemble", meta, arrays)


def write_ensemble(path, ens) -> bytes:
    meta, arrays = _parts(ens)
    return binfile.write(path, "ensemble", meta, arrays)


def read_ensemble(path):
    from ..reweight import WeightedEnsemble

    meta, arrays = binfile.read(path, "ensemble")
    return WeightedEnsemble(
        arrays["samples"], arrays["model_logp"], arrays["energies"], arrays["valid"].astype(bool),
        arrays.get("log_weights"), meta.get("provenance", {}),
    )
