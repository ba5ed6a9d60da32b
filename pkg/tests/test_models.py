import numpy as np
import pytest

from msdalab.errors import DegenerateInputError, ShapeError
from msdalab.masks import GridShape, Mask, MaskSpec, sample_mask
from msdalab.models import (
    LOGISTIC,
    GlmModel,
    LossFamily,
    TwoLayerNet,
    flatness_identity_check,
    glm_predict,
    model_from_json,
    net_input_grad,
    net_layer1_grad,
    net_predict,
    point_loss,
)
from msdalab.stochastics import BetaParams, RngStream


def test_glm_predict_examples():
    assert glm_predict(GlmModel([0.0, 0.0]), [4.0, -2.0]) == 0.0
    assert glm_predict(GlmModel([1.0, -1.0]), [3.0, 1.0]) == 2.0
    assert glm_predict(GlmModel([1.0, 0.0], 5.0), [0.0, 0.0]) == 5.0
    with pytest.raises(ShapeError):
        glm_predict(GlmModel([1.0, 0.0]), [1.0, 2.0, 3.0])


def test_glm_rejects_nonfinite():
    with pytest.raises(ShapeError):
        GlmModel([np.nan])


def test_point_loss_examples():
    assert point_loss(LOGISTIC, 0.0, 0.0) == pytest.approx(np.log(2), abs=1e-15)
    assert point_loss(LOGISTIC, 0.0, 1.0) == pytest.approx(np.log(2), abs=1e-15)
    v = point_loss(LOGISTIC, 50.0, 1.0)
    assert 0 <= v < 1e-20
    assert point_loss(LOGISTIC, -800.0, 0.0) == 0.0
    assert point_loss(LOGISTIC, 800.0, 0.0) == pytest.approx(800.0)


def test_stable_loss_matches_definition():
    f = np.linspace(-20, 20, 81)
    for y in (0.0, 0.3, 1.0):
        direct = np.log1p(np.exp(f)) - y * f
        assert np.allclose(point_loss(LOGISTIC, f, y), direct, rtol=1e-12, atol=1e-14)


def test_link_derivatives_by_finite_differences():
    f = np.linspace(-8, 8, 161)
    h = 1e-5
    d1 = (LOGISTIC.h(f + h) - LOGISTIC.h(f - h)) / (2 * h)
    d2 = (LOGISTIC.dh(f + h) - LOGISTIC.dh(f - h)) / (2 * h)
    d3 = (LOGISTIC.d2h(f + h) - LOGISTIC.d2h(f - h)) / (2 * h)
    assert np.allclose(LOGISTIC.dh(f), d1, rtol=1e-6, atol=1e-12)
    assert np.allclose(LOGISTIC.d2h(f), d2, rtol=1e-6, atol=1e-12)
    # h''' changes sign at 0, so its check needs an absolute floor
    assert np.allclose(LOGISTIC.third(f), d3, rtol=1e-6, atol=1e-9)
    assert np.all(LOGISTIC.d2h(f) >= 0)


def test_third_derivative_fallback():
    fam = LossFamily("logistic-fd", LOGISTIC.h, LOGISTIC.dh, LOGISTIC.d2h)
    f = np.linspace(-5, 5, 21)
    assert np.allclose(fam.third(f), LOGISTIC.third(f), atol=1e-9)


def test_net_identity_examples():
    net = TwoLayerNet(np.eye(3), np.ones(3), 0.0)
    x = np.array([0.5, 1.0, 2.0])
    assert net_predict(net, x) == pytest.approx(3.5)
    assert np.array_equal(net_input_grad(net, x), np.ones(3))
    assert net_predict(TwoLayerNet(np.eye(3), np.ones(3), 1.25), np.zeros(3)) == 1.25


def test_net_shape_checks():
    with pytest.raises(ShapeError):
        TwoLayerNet(np.eye(3), np.ones(2))
    with pytest.raises(ShapeError):
        net_predict(TwoLayerNet(np.eye(3), np.ones(3)), np.ones(4))


def _fd_input_grad(net, x, h=1e-5):
    g = np.empty_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (net_predict(net, x + e) - net_predict(net, x - e)) / (2 * h)
    return g


def test_net_input_grad_finite_differences():
    rng = RngStream(3)
    for _ in range(20):
        net = TwoLayerNet.random(rng, 10, 16)
        x = rng.generator.standard_normal(10)
        if np.min(np.abs(net.W @ x)) < 1e-3:
            continue
        g = net_input_grad(net, x)
        assert np.linalg.norm(g - _fd_input_grad(net, x)) <= 1e-5 * max(np.linalg.norm(g), 1e-12)


def test_layer1_grad_finite_differences():
    rng = RngStream(4)
    net = TwoLayerNet.random(rng, 5, 4)
    x = rng.generator.standard_normal(5)
    G = net_layer1_grad(net, x)
    h = 1e-6
    for i in range(4):
        for j in range(5):
            Wp, Wm = net.W.copy(), net.W.copy()
            Wp[i, j] += h
            Wm[i, j] -= h
            fd = (net_predict(TwoLayerNet(Wp, net.theta1, net.theta0), x)
                  - net_predict(TwoLayerNet(Wm, net.theta1, net.theta0), x)) / (2 * h)
            assert G[i, j] == pytest.approx(fd, rel=1e-5, abs=1e-9)


def test_json_round_trip():
    net = TwoLayerNet.random(RngStream(1), 3, 2)
    back = model_from_json(net.to_json())
    assert np.array_equal(back.W, net.W) and back.theta0 == net.theta0
    glm = GlmModel([1.0, 2.0], -0.5)
    assert model_from_json(glm.to_json()).params().tolist() == [1.0, 2.0, -0.5]
    with pytest.raises(ShapeError):
        model_from_json({"kind": "cnn"})


def test_flatness_identity_examples():
    rng = RngStream(5)
    net = TwoLayerNet.random(rng, 4, 3)
    x = rng.generator.standard_normal(4)
    ones = Mask(np.ones(4), 1.0, GridShape.flat(4), "mixup")
    lhs, rhs, diff = flatness_identity_check(net, x, ones, rng)
    assert lhs == 0.0 and rhs == 0.0
    lin = TwoLayerNet(np.eye(4), np.array([1.0, -2.0, 0.5, 3.0]))
    xp = np.array([0.3, 1.0, 2.0, 0.7])
    m = Mask(np.array([0.0, 1.0, 0.25, 0.5]), 0.5, GridShape.flat(4), "synthesized")
    lhs, rhs, diff = flatness_identity_check(lin, xp, m)
    assert lhs == pytest.approx(((1 - m.values) * lin.theta1) @ xp, abs=1e-14)
    assert diff <= 1e-12


def test_flatness_kink_handling():
    net = TwoLayerNet(np.eye(2), np.ones(2))
    m = Mask(np.zeros(2), 0.0, GridShape.flat(2), "bernoulli")
    with pytest.raises(DegenerateInputError):
        flatness_identity_check(net, np.array([0.0, 1.0]), m)
    lhs, rhs, diff = flatness_identity_check(net, np.array([0.0, 1.0]), m, RngStream(1))
    assert diff <= 1e-12


def test_flatness_identity_random_triples():
    rng = RngStream(6)
    spec = MaskSpec("cutmix", BetaParams(1, 1), GridShape.square(4))
    worst = 0.0
    for _ in range(200):
        net = TwoLayerNet.random(rng, 16, 8)
        x = rng.generator.standard_normal(16)
        lhs, rhs, diff = flatness_identity_check(net, x, sample_mask(rng, spec), rng)
        worst = max(worst, diff / (1 + abs(lhs)))
    assert worst <= 1e-9
