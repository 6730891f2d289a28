import numpy as np
import pytest

from tbg.errors import ContractViolation, DecompositionError, DivergedIntegration, NumericError
from tbg.numcore import (
    RK4, DormandPrince, Dual, Layout, ParamVector, Tape, adam_init, adam_step, grad, jvp, ops, rk_integrate,
    seed_basis, sym_eig, value_and_grad,
)


def central_fd(f, x, h=1e-5):
    g = np.zeros_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e.flat[i] = h
        g.flat[i] = (f(x + e) - f(x - e)) / (2 * h)
    return g


# reverse mode ---------------------------------------------------------------

def test_square_gradient():
    assert grad(lambda x: (x * x).sum(), np.array([3.0]))[0] == pytest.approx(6.0)


def test_constant_function_has_zero_gradient():
    val, g = value_and_grad(lambda x: np.sum([1.0, 2.0]), np.array([0.5, 1.5]))
    assert val == 3.0
    assert np.all(g == 0.0)


def _mlp(p, x, shapes):
    w1 = p[: shapes[0]].reshape(3, 4)
    b1 = p[shapes[0] : shapes[0] + 4]
    w2 = p[shapes[0] + 4 :].reshape(4, 1)
    h = ops.silu(x @ w1 + b1)
    return ((h @ w2) ** 2).sum()


def test_two_layer_silu_matches_finite_differences():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(5, 3))
    p = rng.normal(size=12 + 4 + 4)
    g = grad(lambda q: _mlp(q, x, (12,)), p)
    fd = central_fd(lambda q: _mlp(q, x, (12,)), p)
    assert np.all(np.abs(g - fd) <= 1e-4 * np.maximum(np.abs(fd), 1e-3))


@pytest.mark.parametrize("fn", ["exp", "log", "sqrt", "sin", "cos", "tanh", "sigmoid", "silu"])
def test_unary_gradients(fn):
    x = np.array([0.3, 0.7, 1.9])
    f = lambda v: getattr(ops, fn)(v).sum()
    g = grad(f, x)
    fd = central_fd(lambda v: float(np.sum(getattr(ops, fn)(v))), x)
    np.testing.assert_allclose(g, fd, rtol=1e-7, atol=1e-9)


def test_atan2_concat_and_broadcast_gradients():
    rng = np.random.default_rng(1)
    a = rng.normal(size=(3, 2))

    def f(v):
        y = ops.atan2(v[:, 0], v[:, 1] + 2.0)
        z = ops.concat([v * 2.0, v[:, :1]], axis=1)
        return (y.sum() + (z * np.array([1.0, 2.0, 3.0])).sum()) + (v.sum(axis=0) ** 2).sum()

    g = grad(f, a)
    fd = central_fd(lambda v: float(ops.value_of(f(v))), a)
    np.testing.assert_allclose(g, fd, rtol=1e-6, atol=1e-8)


def test_tape_is_topologically_ordered_and_replays_bit_identically():
    tape = Tape()
    x = tape.leaf(np.array([0.1, -0.4, 2.0]))
    y = ops.silu(x * x + 1.0).sum()
    for k, (_, inputs, _) in enumerate(tape.nodes):
        assert all(i < k for i in inputs)
    vals = tape.replay()
    for a, b in zip(vals, tape.values):
        assert np.array_equal(a, b)
    assert tape.values[y.idx].shape == ()


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_nan_reports_node_index():
    with pytest.raises(NumericError) as exc:
        value_and_grad(lambda x: ops.log(x - 1.0).sum() * 0.0 + ops.sqrt(x - 5.0).sum(), np.array([2.0]))
    assert exc.value.index is not None


def test_non_scalar_output_rejected():
    with pytest.raises(ContractViolation):
        value_and_grad(lambda x: x * 2.0, np.ones(3))


# forward mode ---------------------------------------------------------------

def test_jvp_matches_reverse_mode():
    rng = np.random.default_rng(2)
    x = rng.normal(size=4)
    f = lambda v: ops.tanh(v * v).sum() + ops.exp(v[0]) * v[1]
    g = grad(f, x)
    _, t = jvp(f, x, np.eye(4))
    np.testing.assert_allclose(t, g, rtol=1e-12)


def test_seed_basis_is_identity():
    d = seed_basis(np.arange(6.0).reshape(2, 3))
    assert d.t.shape == (6, 2, 3)
    np.testing.assert_array_equal(d.t.reshape(6, 6), np.eye(6))
    assert isinstance(d * 2.0, Dual)


# ADAM -----------------------------------------------------------------------

def test_adam_zero_gradient_leaves_params():
    st = adam_init(3, lr=0.1)
    p, st2 = adam_step(st, np.ones(3), np.zeros(3))
    np.testing.assert_array_equal(p, np.ones(3))
    assert st2.step == 1 and st.step == 0


def test_adam_first_step_moves_by_lr():
    st = adam_init(4, lr=0.01)
    g = np.array([1e-3, -2.0, 50.0, -1e4])
    p, _ = adam_step(st, np.zeros(4), g)
    assert np.all(np.abs(p) <= 0.01 * (1 + 1e-6))
    np.testing.assert_allclose(np.abs(p), 0.01, rtol=1e-4)


def test_adam_quadratic_reference_run():
    st = adam_init(2, lr=1e-2)
    theta = np.array([1.0, 1.0])
    f = []
    for _ in range(200):
        v, g = value_and_grad(lambda t: (t * t).sum(), theta)
        f.append(v)
        theta, st = adam_step(st, theta, g)
    f.append(float(theta @ theta))
    assert np.all(np.diff(f[10:]) < 0)
    assert f[-1] < 1e-2
    assert st.step == 200


def test_adam_rejects_length_mismatch():
    with pytest.raises(ContractViolation):
        adam_step(adam_init(3), np.zeros(3), np.zeros(2))


# layout ---------------------------------------------------------------------

def test_layout_covers_array():
    lay = Layout.build([("a", (2, 3)), ("b", (4,)), ("c", ())])
    spans = list(lay.ranges())
    assert spans[0][1] == 0 and spans[-1][2] == lay.size == 11
    assert all(spans[k][2] == spans[k + 1][1] for k in range(len(spans) - 1))
    flat = np.arange(11.0)
    np.testing.assert_array_equal(lay.pack(lay.unpack(flat)), flat)
    with pytest.raises(ContractViolation):
        ParamVector(np.zeros(10), lay)


# ODE ------------------------------------------------------------------------

def test_zero_field_is_identity():
    x0 = np.array([[0.3, -1.2], [2.0, 0.5]])
    assert np.array_equal(rk_integrate(lambda t, x: np.zeros_like(x), x0, 0.0, 1.0, RK4(7)), x0)


def test_exponential_decay_rk4():
    x = rk_integrate(lambda t, x: -x, np.array([1.0, 0.0]), 0.0, 1.0, RK4(100))
    np.testing.assert_allclose(x, [np.exp(-1.0), 0.0], atol=1e-8)


@pytest.mark.parametrize("solver", [RK4(100), DormandPrince(rtol=1e-9, atol=1e-10)])
def test_reverse_integration_round_trip(solver):
    v = lambda t, x: np.sin(3 * t) * x[::-1] - 0.5 * x
    x0 = np.array([0.7, -0.2])
    x1 = rk_integrate(v, x0, 0.0, 1.0, solver)
    np.testing.assert_allclose(rk_integrate(v, x1, 1.0, 0.0, solver), x0, atol=1e-6)


def test_dopri_accuracy_and_nfe():
    x, nfe = rk_integrate(lambda t, x: -x, np.array([1.0]), 0.0, 1.0, DormandPrince(rtol=1e-8, atol=1e-10),
                          return_nfe=True)
    assert abs(x[0] - np.exp(-1)) < 1e-7
    assert nfe > 0


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_reports_time():
    with pytest.raises(DivergedIntegration) as exc:
        rk_integrate(lambda t, x: x * x * 1e3, np.array([10.0]), 0.0, 1.0, RK4(10))
    assert 0.0 <= exc.value.t <= 1.0


# generalized eigenproblem -----------------------------------------------------

def test_sym_eig_diagonal():
    lam, w = sym_eig(np.diag([1.0, 3.0]))
    np.testing.assert_allclose(lam, [3.0, 1.0])
    np.testing.assert_allclose(np.abs(w), [[0, 1], [1, 0]], atol=1e-14)


def test_sym_eig_identical_matrices():
    rng = np.random.default_rng(3)
    m = rng.normal(size=(4, 4))
    b = m @ m.T + 4 * np.eye(4)
    lam, _ = sym_eig(b, b)
    np.testing.assert_allclose(lam, 1.0, atol=1e-10)


def test_sym_eig_random_residuals():
    rng = np.random.default_rng(4)
    m = rng.normal(size=(5, 5))
    a = m + m.T
    n = rng.normal(size=(5, 5))
    b = n @ n.T + np.eye(5)
    lam, w = sym_eig(a, b)
    assert np.all(np.diff(lam) <= 0)
    for k in range(5):
        assert np.linalg.norm(a @ w[:, k] - lam[k] * b @ w[:, k]) <= 1e-8
    np.testing.assert_allclose(w.T @ b @ w, np.eye(5), atol=1e-10)


def test_sym_eig_rejects_indefinite_metric():
    with pytest.raises(DecompositionError):
        sym_eig(np.eye(2), np.diag([1.0, -1.0]))
