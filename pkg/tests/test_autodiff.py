import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lmdpinn import autodiff as ad
from lmdpinn.autodiff import GradTape, Jet2, NonFiniteError, Var
from lmdpinn.network import NetworkConfig, init_glorot

X100 = np.linspace(-2.5, 2.5, 100)
finite = st.floats(min_value=-3.0, max_value=3.0, allow_nan=False)


def close(a, b, rtol=1e-12):
    np.testing.assert_allclose(a, b, rtol=rtol, atol=1e-14)


# --- scalar jets against hand derivatives --------------------------------------------

def test_tanh_jet_matches_closed_form():
    j = ad.jet_eval(ad.tanh, X100)
    t = np.tanh(X100)
    close(j.value, t)
    close(j.d1, 1 - t**2)
    close(j.d2, -2 * t * (1 - t**2))


def test_softplus_jet_matches_closed_form():
    j = ad.jet_eval(ad.softplus, X100)
    s = 1 / (1 + np.exp(-X100))
    close(j.value, np.log1p(np.exp(X100)))
    close(j.d1, s)
    close(j.d2, s * (1 - s))


def test_softplus_is_stable_far_out():
    j = ad.jet_eval(ad.softplus, np.array([-800.0, 800.0]))
    assert np.all(np.isfinite([j.value, j.d1, j.d2]))
    assert j.value[1] == 800.0 and j.d1[0] == 0.0


def test_exp_product_quotient_power():
    x = X100
    close(ad.jet_eval(ad.exp, x).d2, np.exp(x))
    # f = x^2 * exp(x)
    j = ad.jet_eval(lambda u: u * u * ad.exp(u), x)
    close(j.d1, (2 * x + x**2) * np.exp(x))
    close(j.d2, (2 + 4 * x + x**2) * np.exp(x))
    # f = 1 / (1 + x^2)
    j = ad.jet_eval(lambda u: 1.0 / (1.0 + u * u), x)
    close(j.d1, -2 * x / (1 + x**2) ** 2)
    close(j.d2, (6 * x**2 - 2) / (1 + x**2) ** 3)
    # f = x^4 and x^0.5 on positive values
    close(ad.jet_eval(lambda u: u**4, x).d2, 12 * x**2)
    xp = x + 3.0
    close(ad.jet_eval(lambda u: u**0.5, xp).d2, -0.25 * xp**-1.5)
    close(ad.jet_eval(lambda u: u**0, x).d1, 0.0)


def test_composition_chain_rule():
    # tanh(softplus(x)) via hand chain rule
    x = X100
    sp = np.log1p(np.exp(x))
    s = 1 / (1 + np.exp(-x))
    t = np.tanh(sp)
    g1, g2 = 1 - t**2, -2 * t * (1 - t**2)
    j = ad.jet_eval(lambda u: ad.tanh(ad.softplus(u)), x)
    close(j.d1, g1 * s)
    close(j.d2, g2 * s**2 + g1 * s * (1 - s))


@given(a=finite, b=finite, x=finite)
def test_jet_linearity(a, b, x):
    f = ad.jet_eval(lambda u: a * ad.tanh(u) + b * u * u, x)
    g = ad.jet_eval(ad.tanh, x)
    assert f.d2 == pytest.approx(a * g.d2 + 2 * b, rel=1e-12, abs=1e-12)


@given(x=finite)
def test_product_rule_property(x):
    u = ad.jet_eval(lambda v: ad.tanh(v) * ad.exp(v), x)
    t, e = np.tanh(x), np.exp(x)
    assert u.d1 == pytest.approx((1 - t * t) * e + t * e, rel=1e-12, abs=1e-12)


# --- MLP jets -------------------------------------------------------------------------

def _fd_axis(net, x, axis, h=1e-4):
    step = np.zeros(4)
    step[axis] = h
    fp, fm, f0 = net.apply(x + step), net.apply(x - step), net.apply(x)
    return (fp - fm) / (2 * h), (fp - 2 * f0 + fm) / h**2


@pytest.mark.parametrize("preset", [NetworkConfig.temperature, NetworkConfig.stress_displacement])
def test_mlp_jets_match_finite_differences(preset):
    net = init_glorot(preset(7))
    x = np.random.default_rng(1).uniform(-0.9, 0.9, (20, 4))
    (v, d1, d2), _ = ad.mlp_jet_forward(net.weights, net.biases, net.activations, x, (0, 1, 2, 3), (0, 1, 2, 3))
    np.testing.assert_allclose(v, net.apply(x), rtol=1e-14)
    for k in range(4):
        f1, f2 = _fd_axis(net, x, k)
        np.testing.assert_allclose(d1[:, k], f1, rtol=1e-6, atol=1e-8)
        np.testing.assert_allclose(d2[:, k], f2, rtol=1e-3, atol=1e-5)


def test_laplacian_mode_is_weighted_sum():
    net = init_glorot(NetworkConfig.temperature(2))
    x = np.random.default_rng(3).uniform(-1, 1, (9, 4))
    sc = np.array([0.5, 2.0, 4.0, 8.0])
    (_, d1, d2), _ = ad.mlp_jet_forward(net.weights, net.biases, net.activations, x, (0, 1, 2, 3), (0, 1, 2))
    (_, e1, e2), _ = ad.mlp_jet_forward(net.weights, net.biases, net.activations, x, (0, 1, 2, 3), (0, 1, 2),
                                        second_sum=True, axis_scale=sc)
    np.testing.assert_allclose(e1, d1 * sc[None, :, None], rtol=1e-13)
    np.testing.assert_allclose(e2[:, 0], (d2 * (sc[:3] ** 2)[None, :, None]).sum(1), rtol=1e-12, atol=1e-15)


@pytest.mark.parametrize("second_sum", [False, True])
def test_jet_backward_matches_finite_differences(second_sum):
    net = init_glorot(NetworkConfig(2, 8, 4, 2, "tanh", "softplus", 3, ("a", "b")))
    rng = np.random.default_rng(4)
    x = rng.uniform(-1, 1, (6, 4))
    axes, second = (3, 0, 2), (1, 2)
    sc = np.array([1.5, 0.5, 2.0])

    def run(n):
        return ad.mlp_jet_forward(n.weights, n.biases, n.activations, x, axes, second, second_sum=second_sum, axis_scale=sc)

    (v, d1, d2), cache = run(net)
    g0, g1, g2 = rng.normal(size=v.shape), rng.normal(size=d1.shape), rng.normal(size=d2.shape)
    gW, gb = ad.mlp_jet_backward(cache, g0, g1, g2)
    grad = np.concatenate([np.concatenate([a.ravel(), b.ravel()]) for a, b in zip(gW, gb)])
    flat = net.flat()

    def L(p):
        (a, b, c), _ = run(net.with_flat(p))
        return (a * g0).sum() + (b * g1).sum() + (c * g2).sum()

    fd = np.array([(L(flat + e) - L(flat - e)) / 2e-6 for e in np.eye(len(flat)) * 1e-6])
    np.testing.assert_allclose(grad, fd, rtol=1e-5, atol=1e-7)


def test_directional_jet_direction_vector_scales():
    net = init_glorot(NetworkConfig.temperature(0))
    x = np.array([0.1, -0.2, 0.3, 0.4])
    a = ad.directional_jet(net, x, 2)
    b = ad.directional_jet(net, x, [0, 0, -2.0, 0])
    close(b.d1, -2 * a.d1)
    close(b.d2, 4 * a.d2)
    with pytest.raises(ValueError):
        ad.directional_jet(net, x, [1, 1, 0, 0])


def test_directional_jet_reports_offending_input():
    net = init_glorot(NetworkConfig.temperature(0))
    x = np.array([[0.0, 0.0, 0.0, 0.0], [np.nan, 0.0, 0.0, 0.0]])
    with pytest.raises(NonFiniteError) as err:
        ad.directional_jet(net, x, 0)
    assert np.isnan(err.value.offending_input[0])


# --- tape -----------------------------------------------------------------------------

def test_tape_gradient_of_elementwise_expression():
    x0 = np.array([0.3, -1.2, 2.0])
    with GradTape() as tape:
        x = tape.watch(x0)
        y = ((x * x * 3.0 - x / 2.0 + 1.0) ** 2).sum() + ad.vexp(x).mean()
    (g,) = tape.gradient(y, [x])
    inner = 3 * x0**2 - x0 / 2 + 1
    close(g, 2 * inner * (6 * x0 - 0.5) + np.exp(x0) / 3)


def test_tape_broadcast_and_indexing():
    a0 = np.arange(6.0).reshape(3, 2)
    b0 = np.array([1.0, -1.0])
    with GradTape() as tape:
        a, b = tape.watch(a0), tape.watch(b0)
        y = (a * b)[:, 1].sum() + a[[0, 0, 2], 0].sum()
    ga, gb = tape.gradient(y, [a, b])
    close(ga, np.array([[2.0, -1.0], [0.0, -1.0], [1.0, -1.0]]))
    close(gb, np.array([0.0, a0[:, 1].sum()]))


def test_unused_source_gets_zero_gradient():
    with GradTape() as tape:
        a, b = tape.watch(np.ones(2)), tape.watch(np.ones(3))
        y = (a * 2.0).sum()
    assert np.all(tape.gradient(y, [b])[0] == 0)


def test_vars_outside_tape_are_plain():
    v = Var(np.ones(2)) * 3.0
    assert v.index == -1 and np.all(v.value == 3.0)


def test_loss_param_gradient_abort_carries_breakdown():
    net = init_glorot(NetworkConfig.temperature(0))

    def bad(pv):
        y, _, _ = ad.mlp_jets(pv[0], net.activations, np.zeros((2, 4)))
        return y.sum() * np.inf, {"pde": y.sum() * np.inf, "bc": 1.0}

    with pytest.raises(NonFiniteError) as err:
        ad.loss_param_gradient(bad, [net])
    assert err.value.breakdown["bc"] == 1.0


@settings(max_examples=10, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_selfcheck_passes_on_random_nets(seed):
    rep = ad.derivative_selfcheck(init_glorot(NetworkConfig.temperature(seed)), samples=8, seed=seed)
    assert rep.ok and not rep.flagged()


def test_selfcheck_flags_corrupted_jets():
    def broken(net, x, axis):
        j = ad.directional_jet(net, x, axis)
        return Jet2(j.value, j.d1 * 1.05, j.d2)

    rep = ad.derivative_selfcheck(init_glorot(NetworkConfig.temperature(0)), jet_fn=broken)
    assert rep.flagged()
