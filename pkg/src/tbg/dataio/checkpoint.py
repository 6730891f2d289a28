"""Checkpoints: parameters, optimiser and RNG state, and every config."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import binfile

__all__ = ["Checkpoint", "write_checkpoint", "read_checkpoint"]


@dataclass
class Checkpoint:
    params: np.ndarray
    model: dict
    training: dict
    class_table: str
    step: int = 0
    adam: dict | None = None  # {"m", "v", "step", "lr", ...}
    rng_state: dict | None = None
    extra: dict = field(default_factory=dict)

    @property
    def class_table_hash(self) -> str:
        import hashlib

        return hashlib.sha256(self.class_table.encode()).hexdigest()


def write_checkpoint(path, ckpt: Checkpoint) -> bytes:
    arrays = {"params": np.asarray(ckpt.params, dtype=float)}
    adam_meta = None
    if ckpt.adam is not None:
        arrays["adam_m"] = np.asarray(ckpt.adam["m"], dtype=float)
        arrays["adam_v"] = np.asarray(ckpt.adam["v"], dtype=float)
        adam_meta = {k: v for k, v in ckpt.adam.items() if k not in ("m", "v")}
    meta = {
        "model": ckpt.model,
        "training": ckpt.training,
        "class_table": ckpt.class_table,
        "class_table_sha256": ckpt.class_table_hash,
        "step": int(ckpt.step),
        "adam": adam_meta,
        "rng_state": ckpt.rng_state,
        "extra": ckpt.extra,
    }
    return binfile.write(path, "checkpoint", meta, arrays)


def read_checkpoint(path) -> Checkpoint:
    from ..errors import IntegrityError
    import hashlib

    meta, arrays = binfile.read(path, "checkpoint")
    if hashlib.sha256(meta["class_table"].encode()).hexdigest() != meta["class_table_sha256"]:
        raise IntegrityError("class table hash mismatch in checkpoint")
    adam = None
    if meta.get("adam") is not None:
        adam = dict(meta["adam"], m=arrays["adam_m"], v=arrays["adam_v"])
    return Checkpoint(
        params=arrays["params"], model=meta["model"], training=meta["training"],
        class_table=meta["class_table"], step=meta["step"], adam=adam,
        rng_state=meta.get("rng_state"), extra=meta.get("extra", {}),
    )
