"""Equivariant graph vector field and atom embeddings."""
from .egnn import (
    PRESETS, EgnnConfig, EgnnField, egnn_divergence, egnn_forward, init_params,
    n_parameters, param_layout, velocity_and_divergence,
)
from .embedding import (
    BACKBONE_NAMES, VARIANTS, AtomClassTable, atom_class_key, build_embedding,
    embedding_width, generate_class_table,
)

__all__ = [
    "PRESETS", "EgnnConfig", "EgnnField", "egnn_divergence", "egnn_forward", "init_params",
    "n_parameters", "param_layout", "velocity_and_divergence",
    "BACKBONE_NAMES", "VARIANTS", "AtomClassTable", "atom_class_key", "build_embedding",
    "embedding_width", "generate_class_table",
]
