import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from tbg.errors import ContractViolation, ParseError, UnknownAtomClass
from tbg.targets import build_dipeptide
from tbg.topology import AMINO_ACIDS, Atom, MolecularTopology
from tbg.vecfield import (
    BACKBONE_NAMES, PRESETS, AtomClassTable, EgnnConfig, EgnnField, build_embedding, egnn_divergence,
    egnn_forward, embedding_width, generate_class_table, init_params, n_parameters, param_layout,
    velocity_and_divergence,
)
from tbg.vecfield.egnn import divergence_reference


def _random_params(cfg, seed=0, scale=0.3):
    # larger coordinate heads than the default init so the field is far from zero
    return np.random.default_rng(seed).normal(scale=scale, size=param_layout(cfg).size)


def _emb(n, width, seed=0):
    rng = np.random.default_rng(seed)
    e = np.zeros((n, width))
    e[np.arange(n), rng.integers(0, width, size=n)] = 1.0
    return e


CFG = EgnnConfig(n_layers=3, n_hidden=8, n_embedding=4)


# forward ------------------------------------------------------------------

def test_output_is_mean_free():
    rng = np.random.default_rng(1)
    p = _random_params(CFG)
    x = rng.normal(size=(6, 5, 3))
    v = egnn_forward(p, CFG, 0.4, x, _emb(5, 4))
    assert np.abs(v.sum(axis=1)).max() <= 1e-12


def test_two_identical_atoms_move_along_their_axis():
    p = _random_params(CFG, 2)
    x = np.array([[0.1, 0.2, -0.3], [-0.4, 0.5, 0.9]])
    emb = np.zeros((2, 4))
    emb[:, 1] = 1.0
    v = egnn_forward(p, CFG, 0.7, x, emb)
    np.testing.assert_allclose(v[0], -v[1], atol=1e-14)
    d = x[0] - x[1]
    assert np.linalg.norm(np.cross(v[0], d)) <= 1e-12 * (np.linalg.norm(v[0]) + 1e-300) * np.linalg.norm(d) + 1e-15


@pytest.mark.parametrize("seed", range(5))
def test_rotation_equivariance(seed):
    rng = np.random.default_rng(seed)
    p = _random_params(CFG, seed)
    x = rng.normal(size=(5, 3))
    R = Rotation.random(random_state=seed).as_matrix()
    emb = _emb(5, 4, seed)
    v = egnn_forward(p, CFG, 0.3, x, emb)
    np.testing.assert_allclose(egnn_forward(p, CFG, 0.3, x @ R.T, emb), v @ R.T, atol=1e-10)


def test_translation_invariance_and_permutation_equivariance():
    rng = np.random.default_rng(7)
    p = _random_params(CFG, 7)
    x = rng.normal(size=(6, 3))
    emb = _emb(6, 4, 7)
    v = egnn_forward(p, CFG, 0.9, x, emb)
    np.testing.assert_allclose(egnn_forward(p, CFG, 0.9, x + [3.0, -1.0, 2.0], emb), v, atol=1e-10)
    perm = rng.permutation(6)
    np.testing.assert_allclose(egnn_forward(p, CFG, 0.9, x[perm], emb[perm]), v[perm], atol=1e-10)


def test_batch_matches_single():
    rng = np.random.default_rng(3)
    p = _random_params(CFG, 3)
    x = rng.normal(size=(4, 5, 3))
    emb = _emb(5, 4)
    vb = egnn_forward(p, CFG, 0.2, x, emb)
    for k in range(4):
        np.testing.assert_allclose(vb[k], egnn_forward(p, CFG, 0.2, x[k], emb), atol=1e-14)


def test_rejects_bad_shapes():
    p = init_params(CFG)
    with pytest.raises(ContractViolation):
        egnn_forward(p, CFG, 0.0, np.zeros((2, 3, 4, 5)), _emb(4, 4))
    with pytest.raises(ContractViolation):
        egnn_forward(p, CFG, 0.0, np.zeros((3, 3)), _emb(4, 4))


def test_default_init_is_near_identity_flow():
    v = egnn_forward(init_params(CFG, 0), CFG, 0.5, np.random.default_rng(0).normal(size=(5, 3)), _emb(5, 4))
    assert np.abs(v).max() < 1e-2


# divergence ---------------------------------------------------------------

def test_zero_parameters_give_zero_divergence():
    cfg = EgnnConfig(2, 6, 3)
    p = np.zeros(param_layout(cfg).size)
    x = np.random.default_rng(0).normal(size=(4, 3))
    v, div = velocity_and_divergence(p, cfg, 0.5, x, _emb(4, 3))
    assert np.all(v == 0.0)
    assert div == 0.0


@pytest.mark.parametrize("cfg", [
    EgnnConfig(1, 5, 3), EgnnConfig(2, 6, 3), EgnnConfig(3, 8, 4), EgnnConfig(4, 6, 3, attention=False),
])
def test_structured_divergence_matches_dense_reference(cfg):
    rng = np.random.default_rng(cfg.n_layers)
    p = _random_params(cfg, 11)
    x = rng.normal(size=(3, 5, 3))
    emb = _emb(5, cfg.n_embedding, 2)
    v, div = velocity_and_divergence(p, cfg, 0.35, x, emb)
    _, ref = divergence_reference(p, cfg, 0.35, x, emb)
    np.testing.assert_allclose(div, ref, rtol=1e-12, atol=1e-12)
    np.testing.assert_allclose(v, egnn_forward(p, cfg, 0.35, x, emb), atol=1e-14)


def _fd_divergence(p, cfg, t, x, emb, h=1e-5):
    n, d = x.shape
    tr = 0.0
    for a in range(n):
        for c in range(d):
            e = np.zeros_like(x)
            e[a, c] = h
            tr += (egnn_forward(p, cfg, t, x + e, emb)[a, c] - egnn_forward(p, cfg, t, x - e, emb)[a, c]) / (2 * h)
    return tr


@pytest.mark.parametrize("seed", range(3))
def test_divergence_matches_finite_differences(seed):
    cfg = EgnnConfig(3, 8, 4)
    rng = np.random.default_rng(seed)
    p = _random_params(cfg, seed)
    x = rng.normal(size=(4, 3))
    emb = _emb(4, 4, seed)
    div = egnn_divergence(p, cfg, 0.6, x, emb)
    fd = _fd_divergence(p, cfg, 0.6, x, emb)
    assert abs(div - fd) <= 1e-5 * max(abs(fd), 1.0)


def test_divergence_rotation_invariant():
    cfg = EgnnConfig(3, 8, 4)
    p = _random_params(cfg, 5)
    x = np.random.default_rng(5).normal(size=(5, 3))
    R = Rotation.random(random_state=5).as_matrix()
    emb = _emb(5, 4)
    assert abs(egnn_divergence(p, cfg, 0.1, x @ R.T, emb) - egnn_divergence(p, cfg, 0.1, x, emb)) <= 1e-8


def test_field_chunking_does_not_change_results():
    cfg = EgnnConfig(2, 6, 3)
    p = _random_params(cfg, 1)
    x = np.random.default_rng(1).normal(size=(10, 4, 3))
    emb = _emb(4, 3)
    a = EgnnField(p, cfg, emb, chunk=3).velocity_and_divergence(0.5, x)
    b = EgnnField(p, cfg, emb, chunk=16).velocity_and_divergence(0.5, x)
    np.testing.assert_allclose(a[0], b[0], rtol=1e-12, atol=1e-14)
    np.testing.assert_allclose(a[1], b[1], rtol=1e-12)


# layout and presets -------------------------------------------------------

def test_layout_shapes_follow_config():
    cfg = EgnnConfig(2, 7, 5)
    lay = dict(param_layout(cfg).segments)
    assert lay["embed.W"] == (6, 7)
    assert lay["1.e1.W"] == (2 * 7 + 2, 7)
    assert lay["0.h1.W"] == (14, 7)
    assert n_parameters(cfg) == param_layout(cfg).size
    assert n_parameters(cfg, with_feature_readout=True) == param_layout(cfg).size + 8 * 6


def test_presets():
    assert (PRESETS["2aa/tbg+full"].n_layers, PRESETS["2aa/tbg+full"].n_hidden) == (9, 128)
    assert PRESETS["2aa/tbg"].n_embedding == 5
    assert PRESETS["2aa/tbg+backbone"].n_embedding == 13
    assert PRESETS["2aa/tbg+full"].n_embedding == 76
    assert PRESETS["ad/tbg+full"].n_embedding == 15


# embeddings ---------------------------------------------------------------

def test_tbg_variant_is_element_only():
    top, _ = build_dipeptide(("ALA", "SER"))
    tab = generate_class_table("tbg")
    emb = build_embedding(top, tab)
    assert emb.shape == (top.n_atoms, 5) == (top.n_atoms, embedding_width(tab))
    carbons = [i for i, a in enumerate(top.atoms) if a.element == "C"]
    assert all(np.array_equal(emb[i], emb[carbons[0]]) for i in carbons)
    np.testing.assert_array_equal(emb.sum(axis=1), 1.0)


def test_backbone_variant_width():
    tab = generate_class_table("tbg+backbone")
    assert embedding_width(tab) == 13 == len(BACKBONE_NAMES) + 5


def test_full_variant_equivalent_hydrogens_share_embedding():
    atoms = (Atom("C", "CA", "ALA", 1), Atom("H", "HB1", "ALA", 1), Atom("H", "HB2", "ALA", 1),
             Atom("H", "HB3", "ALA", 1), Atom("O", "OG", "ALA", 1))
    top = MolecularTopology("methanol", atoms, ((0, 1), (0, 2), (0, 3), (0, 4)))
    tab = generate_class_table("tbg+full", [top])
    emb = build_embedding(top, tab)
    assert emb.shape[1] == len(tab) + len(AMINO_ACIDS) + 2 == 3 + 22
    np.testing.assert_array_equal(emb[1], emb[2])
    np.testing.assert_array_equal(emb[1], emb[3])
    assert not np.array_equal(emb[0], emb[4])


def test_full_variant_positions_differ_only_in_position_block():
    top, _ = build_dipeptide(("ALA", "ALA"))
    tab = generate_class_table("tbg+full", [top])
    emb = build_embedding(top, tab)
    a, b = emb[top.index("CB", 1)], emb[top.index("CB", 2)]
    diff = np.flatnonzero(a != b)
    assert len(diff) == 2
    assert np.all(diff >= len(tab) + len(AMINO_ACIDS))


def test_unknown_class_raises():
    train_top, _ = build_dipeptide(("ALA", "ALA"))
    other, _ = build_dipeptide(("SER", "SER"))
    tab = generate_class_table("tbg+full", [train_top])
    with pytest.raises(UnknownAtomClass, match="SER"):
        build_embedding(other, tab)


def test_class_table_text_round_trip():
    tops = [build_dipeptide(s)[0] for s in (("ALA", "SER"), ("CYS", "GLY"))]
    tab = generate_class_table("tbg+full", tops)
    back = AtomClassTable.from_text(tab.to_text())
    assert back == tab and back.content_hash == tab.content_hash
    with pytest.raises(ParseError):
        AtomClassTable.from_text(tab.to_text().replace("# tbg-class-table", "# nope"))


@pytest.mark.parametrize("name, count", [
    ("2aa/tbg", 1044239), ("2aa/tbg+backbone", 1046295), ("2aa/tbg+full", 1062486),
])
def test_preset_parameter_counts(name, count):
    # the reference model sizes count a final feature readout
    assert n_parameters(PRESETS[name], with_feature_readout=True) == count
