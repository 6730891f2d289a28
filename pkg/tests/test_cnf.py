import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from tbg.cnf import (
    BoltzmannGenerator, LinearField, MeanFreePrior, model_logprob, prior_logprob, prior_sample, pull_back,
    push_forward,
)
from tbg.errors import DomainError
from tbg.numcore import RK4, DormandPrince
from tbg.vecfield import EgnnConfig, EgnnField, param_layout


def _field(n_atoms=4, zero=False, seed=0):
    cfg = EgnnConfig(2, 8, 3)
    p = np.zeros(param_layout(cfg).size) if zero else np.random.default_rng(seed).normal(scale=0.2, size=param_layout(cfg).size)
    emb = np.zeros((n_atoms, 3))
    emb[np.arange(n_atoms), np.arange(n_atoms) % 2] = 1.0  # two classes, alternating
    return EgnnField(p, cfg, emb)


# prior ---------------------------------------------------------------------

def test_prior_samples_are_mean_free():
    x = prior_sample(MeanFreePrior(6, 3), 50, seed=3)
    assert np.abs(x.mean(axis=1)).max() <= 1e-12


def test_two_atom_prior_samples_are_mirror_images():
    x = prior_sample(MeanFreePrior(2, 3), 20, seed=1)
    np.testing.assert_allclose(x[:, 0], -x[:, 1], atol=1e-15)


def test_prior_covariance_matches_projector():
    n = 5
    x = prior_sample(MeanFreePrior(n, 3), 100_000, seed=0)
    proj = np.eye(n) - np.ones((n, n)) / n
    for axis in range(3):
        cov = x[:, :, axis].T @ x[:, :, axis] / len(x)
        assert np.abs(cov - proj).max() <= 0.02


def test_prior_draws_do_not_depend_on_batching():
    prior = MeanFreePrior(4, 3)
    full = prior_sample(prior, 10, seed=7)
    np.testing.assert_array_equal(np.concatenate([prior_sample(prior, 3, 7), prior_sample(prior, 7, 7, start=3)]), full)


def test_prior_logprob_values():
    prior = MeanFreePrior(2, 3)
    assert prior_logprob(prior, np.zeros((2, 3))) == pytest.approx(-1.5 * np.log(2 * np.pi))
    assert prior_logprob(prior, np.zeros((2, 3))) == pytest.approx(-2.7568, abs=1e-4)
    x = prior_sample(MeanFreePrior(5, 3), 1, seed=2)[0]
    p5 = MeanFreePrior(5, 3)
    shifted = x + np.array([1.0, 2.0, -3.0])
    assert prior_logprob(p5, shifted - shifted.mean(axis=0)) == pytest.approx(prior_logprob(p5, x), abs=1e-12)
    R = Rotation.random(random_state=0).as_matrix()
    assert prior_logprob(p5, x @ R.T) == pytest.approx(prior_logprob(p5, x), abs=1e-10)
    with pytest.raises(DomainError):
        prior_logprob(p5, shifted)


# flows ---------------------------------------------------------------------

def test_zero_parameters_give_identity_flow():
    x0 = prior_sample(MeanFreePrior(4, 3), 3, seed=0)
    res = push_forward(_field(zero=True), x0, RK4(10))
    # the only change is re-centring round-off
    np.testing.assert_allclose(res.endpoint, x0, atol=1e-15)
    np.testing.assert_array_equal(res.delta_logdet, 0.0)
    back = pull_back(_field(zero=True), x0, RK4(10))
    np.testing.assert_allclose(back.endpoint, x0, atol=1e-15)
    np.testing.assert_array_equal(back.delta_logdet, 0.0)
    lp = model_logprob(_field(zero=True), x0, RK4(5))
    np.testing.assert_allclose(lp, prior_logprob(MeanFreePrior(4, 3), x0), atol=1e-14)


def test_linear_field_analytic_endpoint_and_logdet():
    x0 = prior_sample(MeanFreePrior(3, 3), 4, seed=5)
    res = push_forward(LinearField(-1.0), x0, RK4(100))
    np.testing.assert_allclose(res.endpoint, x0 * np.exp(-1.0), atol=1e-6)
    np.testing.assert_allclose(res.delta_logdet, 6.0, atol=1e-6)


def test_linear_field_two_atom_logprob():
    prior = MeanFreePrior(2, 3)
    x = prior_sample(prior, 1, seed=0)[0]
    lp = model_logprob(LinearField(-1.0), x, RK4(100))
    assert lp == pytest.approx(float(prior_logprob(prior, x * np.e)) + 3.0, abs=1e-6)


def test_round_trip_and_logdet_antisymmetry():
    field = _field(seed=4)
    x0 = prior_sample(MeanFreePrior(4, 3), 5, seed=4)
    fwd = push_forward(field, x0, RK4(100))
    back = pull_back(field, fwd.endpoint, RK4(100))
    np.testing.assert_allclose(back.endpoint, x0, atol=1e-5)
    np.testing.assert_allclose(back.delta_logdet, -fwd.delta_logdet, atol=1e-6)
    assert np.abs(fwd.delta_logdet).max() > 1e-3  # the check is not vacuous


def test_adaptive_solver_agrees_with_rk4():
    field = _field(seed=2)
    x0 = prior_sample(MeanFreePrior(4, 3), 2, seed=2)
    a = push_forward(field, x0, RK4(200))
    b = push_forward(field, x0, DormandPrince(rtol=1e-8, atol=1e-9))
    np.testing.assert_allclose(a.endpoint, b.endpoint, atol=1e-6)
    np.testing.assert_allclose(a.delta_logdet, b.delta_logdet, atol=1e-6)


def test_logprob_is_invariant_under_rotation_and_class_permutation():
    field = _field(seed=9)
    x = prior_sample(MeanFreePrior(4, 3), 1, seed=9)[0] * 0.8
    lp = model_logprob(field, x, RK4(50))
    R = Rotation.random(random_state=9).as_matrix()
    assert model_logprob(field, x @ R.T, RK4(50)) == pytest.approx(lp, abs=1e-6)
    perm = [2, 1, 0, 3]  # atoms 0 and 2 share a class
    assert model_logprob(field, x[perm], RK4(50)) == pytest.approx(lp, abs=1e-6)


def test_dataset_likelihood_is_reproducible():
    field = _field(seed=1)
    x = prior_sample(MeanFreePrior(4, 3), 3, seed=11)
    a = model_logprob(field, x, RK4(20))
    b = model_logprob(field, x, RK4(20))
    assert np.all(np.isfinite(a))
    np.testing.assert_array_equal(a, b)


# generator -----------------------------------------------------------------

def test_generator_density_matches_pull_back():
    field = _field(seed=3)
    gen = BoltzmannGenerator(field, 4, 3, length_scale=2.0, solver=RK4(40), chunk=4)
    x, lp = gen.sample(6, seed=0)
    np.testing.assert_allclose(gen.log_prob(x), lp, atol=1e-5)


def test_generator_output_independent_of_workers():
    gen = BoltzmannGenerator(_field(seed=3), 4, 3, solver=RK4(5), chunk=2)
    a = gen.sample(5, seed=1, workers=1)
    b = gen.sample(5, seed=1, workers=2)
    np.testing.assert_array_equal(a[0], b[0])
    np.testing.assert_array_equal(a[1], b[1])


def test_generator_without_logprob():
    gen = BoltzmannGenerator(_field(seed=3), 4, 3, solver=RK4(10), chunk=4)
    x, lp = gen.sample(4, seed=2, with_logprob=False)
    xl, _ = gen.sample(4, seed=2)
    assert lp is None
    np.testing.assert_allclose(x, xl, atol=1e-12)
