import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from relgan.autodiff import Tape, Tensor, backward, stable_sigmoid
from relgan.losses import (HINGE_SPEC, IPM_SPEC, LOSS_NAMES, LSGAN_SPEC, RALSGAN_SPEC, SGAN_SPEC,
                           CriticBatch, GpConfig, LossSpec, closed_form_gradients_oracle,
                           gradient_penalty, hinge, interpolate, linear, loss_rad_pairwise_oracle,
                           loss_relativistic, loss_relativistic_average, loss_relativistic_simplified,
                           loss_standard_D, loss_standard_G, maps_equal, named_loss, neg_log_sigmoid,
                           squared)
from relgan.nn import DenseLayer, Network, build_mlp

from conftest import numeric_grad

# high-precision reference values (mpmath, 40 digits)
SGAN_D_8_M5 = 0.007050754862013837
RSGAN_D_2_0 = 0.25385602208594499
TWO_LOG2 = 1.3862943611198906
PAIRWISE_2_0_1_M1 = 0.86534057749001712
RASGAN_2_0_1_M1 = 0.82007519160291781
CONST_FAKE_VALUE = 1.5064088680781681


def cb(real, fake):
    return CriticBatch(Tensor(real), Tensor(fake))


finite = st.floats(-30, 30, allow_nan=False)
batches = st.integers(1, 16).flatmap(
    lambda m: st.tuples(st.lists(finite, min_size=m, max_size=m), st.lists(finite, min_size=m, max_size=m)))


# -- specs --------------------------------------------------------------------

def test_non_saturating_and_saturating_generators():
    ns = LossSpec.non_saturating("x", neg_log_sigmoid(1), neg_log_sigmoid(-1))
    assert ns.g1 is ns.f2 and ns.g2 is ns.f1
    sat = LossSpec.saturating("x", neg_log_sigmoid(1), neg_log_sigmoid(-1))
    y = np.linspace(-5, 5, 11)
    np.testing.assert_allclose(sat.g1.numpy(y), -sat.f1.numpy(y))
    np.testing.assert_allclose(sat.g2.numpy(y), -sat.f2.numpy(y))


def test_symmetric_flag_is_checked():
    with pytest.raises(ValueError):
        LossSpec.non_saturating("bad", squared(0), squared(1), symmetric=True)


def test_maps_equal():
    assert maps_equal(neg_log_sigmoid(1), neg_log_sigmoid(1))
    assert not maps_equal(neg_log_sigmoid(1), neg_log_sigmoid(-1))


# -- standard -----------------------------------------------------------------

def test_sgan_standard_examples():
    assert loss_standard_D(SGAN_SPEC, cb([8.0], [-5.0])).item() == pytest.approx(SGAN_D_8_M5, rel=1e-12)
    assert loss_standard_D(SGAN_SPEC, cb([0.0], [0.0])).item() == pytest.approx(TWO_LOG2, rel=1e-14)


def test_lsgan_labels_real_zero_fake_one():
    assert loss_standard_D(LSGAN_SPEC, cb([0.0], [1.0])).item() == 0.0
    assert loss_standard_D(LSGAN_SPEC, cb([1.0], [0.0])).item() == 2.0


def test_hinge_examples():
    assert loss_standard_D(HINGE_SPEC, cb([2.0], [-2.0])).item() == 0.0
    assert loss_standard_D(HINGE_SPEC, cb([0.0], [0.0])).item() == 2.0
    assert named_loss("HingeGAN").loss_g(cb([0.5], [3.0])).item() == -3.0


def test_standard_generator_loss():
    c = cb([1.0, 2.0], [-1.0, 0.5])
    full = loss_standard_G(SGAN_SPEC, c).item()
    named = named_loss("SGAN").loss_g(c).item()
    expected = -np.mean(np.log(stable_sigmoid(np.array([-1.0, 0.5]))))
    assert named == pytest.approx(expected, rel=1e-14)
    assert full > named


# -- relativistic -------------------------------------------------------------

def test_rsgan_examples():
    ld, _ = loss_relativistic(SGAN_SPEC, cb([2.0], [0.0]))
    assert ld.item() == pytest.approx(RSGAN_D_2_0, rel=1e-12)
    ld, _ = loss_relativistic(SGAN_SPEC, cb([1.5, -2.0], [1.5, -2.0]))
    assert ld.item() == pytest.approx(TWO_LOG2, rel=1e-14)
    assert loss_relativistic_simplified(SGAN_SPEC, cb([0.0], [0.0]), "D").item() == pytest.approx(math.log(2))


def test_simplified_requires_symmetric_spec():
    with pytest.raises(ValueError):
        loss_relativistic_simplified(LSGAN_SPEC, cb([0.0], [0.0]))
    with pytest.raises(ValueError):
        loss_relativistic_simplified(SGAN_SPEC, cb([0.0], [0.0]), "X")


@settings(max_examples=200, deadline=None)
@given(batches)
def test_simplified_g_side_is_swapped_d_side(b):
    r, f = b
    g = loss_relativistic_simplified(SGAN_SPEC, cb(r, f), "G").item()
    d = loss_relativistic_simplified(SGAN_SPEC, cb(f, r), "D").item()
    assert g == d


@settings(max_examples=200, deadline=None)
@given(batches)
def test_doubling_identity(b):
    r, f = b
    for spec in (SGAN_SPEC, IPM_SPEC, RALSGAN_SPEC):
        ld, lg = loss_relativistic(spec, cb(r, f))
        assert ld.item() == pytest.approx(2 * loss_relativistic_simplified(spec, cb(r, f), "D").item(),
                                          rel=1e-12, abs=1e-12)
        assert lg.item() == pytest.approx(2 * loss_relativistic_simplified(spec, cb(r, f), "G").item(),
                                          rel=1e-12, abs=1e-12)


@settings(max_examples=200, deadline=None)
@given(batches)
def test_ipm_relativistic_is_difference_of_means(b):
    r, f = b
    ld, lg = loss_relativistic(IPM_SPEC, cb(r, f))
    assert ld.item() == pytest.approx(2 * (np.mean(f) - np.mean(r)), rel=1e-12, abs=1e-12)
    assert lg.item() == pytest.approx(2 * (np.mean(r) - np.mean(f)), rel=1e-12, abs=1e-12)


@settings(max_examples=300, deadline=None)
@given(st.floats(-700, 700))
def test_sigmoid_symmetry(y):
    assert abs((1 - stable_sigmoid(-y)) - stable_sigmoid(y)) <= 1e-12


# -- relativistic average -----------------------------------------------------

@pytest.mark.parametrize("real, fake_mean, expected", [
    (8.0, -5.0, 0.99999774), (8.0, 7.0, 0.73105858), (-3.0, -5.0, 0.88079708)])
def test_rad_probabilities(real, fake_mean, expected):
    assert stable_sigmoid(real - fake_mean) == pytest.approx(expected, abs=5e-9)


def test_absolute_probabilities():
    assert round(float(stable_sigmoid(8.0)), 2) == 1.0
    assert round(float(stable_sigmoid(-3.0)), 2) == 0.05


def test_ralsgan_example():
    ld, _ = named_loss("RaLSGAN").losses(cb([1.0], [-1.0]))
    assert ld.item() == 2.0


def test_rahinge_generator_uses_hinge_both_terms():
    spec = named_loss("RaHingeGAN").spec
    assert maps_equal(spec.g1, hinge(-1)) and maps_equal(spec.g2, hinge(1))
    _, lg = named_loss("RaHingeGAN").losses(cb([3.0], [0.0]))
    # max(0, 1 + (3 - 0)) + max(0, 1 - (0 - 3))
    assert lg.item() == 8.0


@settings(max_examples=100, deadline=None)
@given(finite, finite)
def test_single_sample_average_equals_relativistic(r, f):
    a = loss_relativistic_average(SGAN_SPEC, cb([r], [f]))
    b = loss_relativistic(SGAN_SPEC, cb([r], [f]))
    assert a[0].item() == b[0].item() and a[1].item() == b[1].item()


# -- pairwise oracle ----------------------------------------------------------

def test_pairwise_constant_fakes_example():
    c = cb([1.0, -1.0], [0.0, 0.0])
    ra = loss_relativistic_average(SGAN_SPEC, c)[0].item()
    assert ra == pytest.approx(CONST_FAKE_VALUE, rel=1e-14)
    assert abs(loss_rad_pairwise_oracle(c) - ra) <= 1e-12


def test_pairwise_differs_on_unequal_batch():
    c = cb([2.0, 0.0], [1.0, -1.0])
    pw = loss_rad_pairwise_oracle(c)
    ra = loss_relativistic_average(SGAN_SPEC, c)[0].item()
    assert pw == pytest.approx(PAIRWISE_2_0_1_M1, rel=1e-13)
    assert ra == pytest.approx(RASGAN_2_0_1_M1, rel=1e-13)
    assert abs(pw - ra) > 1e-6


@settings(max_examples=200, deadline=None)
@given(st.integers(1, 8), finite, finite)
def test_pairwise_matches_average_with_constant_critics(m, r, f):
    c = cb([r] * m, [f] * m)
    assert abs(loss_rad_pairwise_oracle(c) - loss_relativistic_average(SGAN_SPEC, c)[0].item()) <= 1e-12


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(0, 30), min_size=1, max_size=4), finite)
def test_pairwise_matches_average_with_reals_symmetric_about_fakes(half, f):
    real = [f + h for h in half] + [f - h for h in half]
    c = cb(real, [f] * len(real))
    assert abs(loss_rad_pairwise_oracle(c) - loss_relativistic_average(SGAN_SPEC, c)[0].item()) <= 1e-12


@settings(max_examples=200, deadline=None)
@given(st.integers(1, 8).flatmap(lambda m: st.tuples(st.lists(finite, min_size=m, max_size=m), finite)))
def test_pairwise_real_term_matches_with_constant_fakes(b):
    real, f = b
    cr = np.array(real)
    pairwise = -np.mean(np.log(np.mean(stable_sigmoid(cr[:, None] - f), axis=1)))
    average = -np.mean(np.log(stable_sigmoid(cr - f)))
    assert abs(pairwise - average) <= 1e-12


def test_pairwise_fake_term_needs_constant_reals():
    # constant fakes alone are not enough: sigmoid of the mean real critic
    # differs from the mean sigmoid unless the reals are balanced
    c = cb([0.0, 1.0], [0.0, 0.0])
    assert abs(loss_rad_pairwise_oracle(c) - loss_relativistic_average(SGAN_SPEC, c)[0].item()) > 1e-3


def test_pairwise_batch_guard():
    with pytest.raises(ValueError):
        loss_rad_pairwise_oracle(cb(np.zeros(65), np.zeros(65)))


# -- relativism ---------------------------------------------------------------

@pytest.mark.parametrize("name", ["RaSGAN", "RSGAN"])
def test_relativistic_generator_sees_real_batch(name, rng):
    r, f = rng.standard_normal(16), rng.standard_normal(16)
    base = named_loss(name).loss_g(cb(r, f)).item()
    for delta in (1e-3, 0.5, 3.0):
        assert named_loss(name).loss_g(cb(r + delta, f)).item() > base


def test_sgan_generator_ignores_real_batch(rng):
    r, f = rng.standard_normal(16), rng.standard_normal(16)
    base = named_loss("SGAN").loss_g(cb(r, f)).item()
    assert named_loss("SGAN").loss_g(cb(r + 2.5, f)).item() == base


# -- gradients w.r.t. critic outputs ------------------------------------------

def _away_from_kinks(rng, margin=1e-2):
    # hinge terms are not differentiable at +-1 (absolute or relative)
    while True:
        r, f = rng.standard_normal(6), rng.standard_normal(6)
        args = np.concatenate([r, f, r - f.mean(), f - r.mean()])
        if np.min(np.abs(np.abs(args) - 1)) > margin:
            return r, f


@pytest.mark.parametrize("name", LOSS_NAMES)
def test_loss_gradients_match_finite_differences(name, rng):
    named = named_loss(name)
    r, f = _away_from_kinks(rng)
    for side in (0, 1):
        tape = Tape()
        tr, tf = tape.leaf(r), tape.leaf(f)
        out = named.losses(CriticBatch(tr, tf))[side]
        g = backward(out, [tr, tf])
        num_r = numeric_grad(lambda v: named.losses(cb(v, f))[side].item(), r.copy())
        num_f = numeric_grad(lambda v: named.losses(cb(r, v))[side].item(), f.copy())
        for got, want in ((g[tr].data, num_r), (g[tf].data, num_f)):
            err = np.max(np.abs(got - want)) / max(np.max(np.abs(want)), 1e-12)
            assert err < 1e-4 or np.max(np.abs(got - want)) < 1e-10


def test_named_loss_registry():
    assert len(LOSS_NAMES) == 10
    for name in LOSS_NAMES:
        assert named_loss(name).name == name
    with pytest.raises(KeyError, match="RaSGAN"):
        named_loss("nope")
    assert [n for n in LOSS_NAMES if named_loss(n).gp] == ["WGAN-GP", "RSGAN-GP", "RaSGAN-GP"]


# -- gradient penalty ---------------------------------------------------------

def _linear_critic(w):
    return Network([DenseLayer(np.array([w], dtype=float), np.zeros(1))])


def test_penalty_zero_for_unit_norm_critic(rng):
    net = _linear_critic([0.6, 0.8])
    for lam in (0.0, 1.0, 10.0):
        p = gradient_penalty(net, rng.standard_normal((8, 2)), rng.standard_normal((8, 2)), GpConfig(lam), rng=rng)
        assert abs(p.item()) < 1e-15


def test_penalty_and_weight_gradient_for_scaled_critic(rng):
    net = _linear_critic([2.0, 0.0])
    tape = Tape()
    params = net.bind(tape)
    xr, xf = rng.standard_normal((8, 2)), rng.standard_normal((8, 2))
    p = gradient_penalty(lambda x: net(x, params), xr, xf, GpConfig(10.0), rng=rng, tape=tape)
    assert p.item() == pytest.approx(10.0, rel=1e-14)
    g = backward(p, params.values())
    # d/dw lam * (||w|| - 1)^2 = lam * 2 (||w|| - 1) w / ||w||
    np.testing.assert_allclose(g[params["0.weight"]].data, [[20.0, 0.0]], rtol=1e-8)
    assert np.all(g[params["0.bias"]].data == 0)


def test_interpolation_endpoints(rng):
    xr, xf = rng.standard_normal((4, 2)), rng.standard_normal((4, 2))
    np.testing.assert_array_equal(interpolate(xr, xf, np.ones(4)), xr)
    np.testing.assert_array_equal(interpolate(xr, xf, np.zeros(4)), xf)
    with pytest.raises(ValueError):
        interpolate(xr, xf, np.full(4, 1.5))
    with pytest.raises(ValueError):
        GpConfig(-1.0)


def test_penalty_weight_gradient_matches_finite_differences(rng):
    net = build_mlp([2, 6, 1], "tanh", seed=3)
    xr, xf = rng.standard_normal((5, 2)), rng.standard_normal((5, 2))
    eps = rng.uniform(size=5)
    tape = Tape()
    params = net.bind(tape)
    p = gradient_penalty(lambda x: net(x, params), xr, xf, GpConfig(10.0), eps=eps, tape=tape)
    g = backward(p, params.values())
    w = net.layers[0].weight

    def f(v):
        saved = w.copy()
        w[...] = v
        out = gradient_penalty(net, xr, xf, GpConfig(10.0), eps=eps).item()
        w[...] = saved
        return out
    num = numeric_grad(f, w.copy())
    np.testing.assert_allclose(g[params["0.weight"]].data, num, rtol=1e-4, atol=1e-7)


# -- closed-form oracle -------------------------------------------------------

def _rel_err(a, b):
    return np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-300)


@pytest.mark.parametrize("kind", ["SGAN_D", "IPM_D"])
def test_oracle_matches_autodiff_critic(kind, rng):
    critic = build_mlp([2, 16, 1], "tanh", seed=int(rng.integers(1000)))
    xr, xf = rng.standard_normal((10, 2)), rng.standard_normal((10, 2))
    oracle = closed_form_gradients_oracle(kind, critic, (xr, xf))
    spec = SGAN_SPEC if kind == "SGAN_D" else IPM_SPEC
    tape = Tape()
    params = critic.bind(tape)
    loss = loss_standard_D(spec, CriticBatch(critic(xr, params), critic(xf, params)))
    g = backward(loss, params.values())
    for name, t in params.items():
        assert _rel_err(oracle[name], g[t].data) < 1e-8


@pytest.mark.parametrize("kind", ["SGAN_G", "IPM_G"])
def test_oracle_matches_autodiff_generator(kind, rng):
    critic = build_mlp([2, 16, 1], "tanh", seed=1)
    gen = build_mlp([3, 16, 2], "tanh", seed=2)
    z = rng.standard_normal((10, 3))
    oracle = closed_form_gradients_oracle(kind, critic, z, generator=gen)
    spec = SGAN_SPEC if kind == "SGAN_G" else IPM_SPEC
    tape = Tape()
    params = gen.bind(tape)
    loss = spec.g2(critic(gen(z, params)).reshape(-1)).mean()
    g = backward(loss, params.values())
    for name, t in params.items():
        assert _rel_err(oracle[name], g[t].data) < 1e-8


def test_ipm_oracle_is_difference_of_mean_gradients(rng):
    critic = build_mlp([2, 4, 1], "tanh", seed=0)
    x = rng.standard_normal((6, 2))
    oracle = closed_form_gradients_oracle("IPM_D", critic, (x, x))
    for arr in oracle.values():
        assert np.max(np.abs(arr)) < 1e-15


def test_sgan_generator_gradient_vanishes_when_fooled(rng):
    critic = _linear_critic([1.0, 1.0])
    critic.layers[0].bias[:] = 40.0  # sigmoid(C) -> 1 everywhere near the origin
    gen = build_mlp([3, 8, 2], "tanh", seed=4)
    oracle = closed_form_gradients_oracle("SGAN_G", critic, rng.standard_normal((8, 3)), generator=gen)
    assert np.sqrt(sum(np.sum(a ** 2) for a in oracle.values())) < 1e-6


def test_oracle_rejects_unknown_kind():
    with pytest.raises(ValueError):
        closed_form_gradients_oracle("LSGAN_D", None, None)


def test_linear_map_values():
    assert linear(-1).numpy(np.array([2.0]))[0] == -2.0
