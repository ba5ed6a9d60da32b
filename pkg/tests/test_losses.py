import json

import numpy as np
import pytest

from msdalab.coefficients import expected_coeff_matrix
from msdalab.errors import ParameterError, PreconditionError, ShapeError
from msdalab.losses import (
    Dataset,
    LossBreakdown,
    approx_loss,
    approx_loss_grad,
    center_dataset,
    glm_approx_terms,
    msda_empirical_loss,
)
from msdalab.masks import GridShape, MaskSpec
from msdalab.models import LOGISTIC, GlmModel, TwoLayerNet
from msdalab.stochastics import BetaParams, RngStream, tilde_lambda_moment

B11 = BetaParams(1, 1)


def flat_spec(method, d=2, beta=B11):
    return MaskSpec(method, beta, GridShape.flat(d))


def toy_data(seed=0, m=40, d=3):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(m, d)) * np.array([1.0, 0.5, 2.0])[:d]
    y = (X @ np.array([1.0, -1.0, 0.3])[:d] + 0.5 * rng.normal(size=m) > 0).astype(float)
    return center_dataset(Dataset(X, y))


def test_center_examples():
    d = center_dataset(Dataset([[-1.0], [3.0]], [0, 1]))
    assert d.X.ravel().tolist() == [-2.0, 2.0]
    assert d.second_moment[0, 0] == 4.0
    assert d.centered
    again = center_dataset(d)
    assert np.max(np.abs(again.X - d.X)) <= 1e-12


def test_dataset_validation():
    with pytest.raises(ShapeError):
        Dataset(np.zeros((3, 2)), [0, 1])
    with pytest.raises(ParameterError):
        Dataset(np.zeros((0, 2)), [])
    s = Dataset([[1.0, 2.0]], [1.0]).samples[0]
    assert s.x.tolist() == [1.0, 2.0] and s.y.tolist() == [1.0]


def test_empirical_loss_no_mixing_equals_lm():
    d = toy_data()
    model = GlmModel([0.7, -1.2, 0.4], 0.1)
    lm = approx_loss(model, LOGISTIC, d, flat_spec("mixup", 3)).L_m
    est = msda_empirical_loss(RngStream(1), model, LOGISTIC, d, flat_spec("mixup", 3), draws=d.m * 5, lam=1.0)
    assert est.value == pytest.approx(lm, abs=1e-12)


@pytest.mark.parametrize("method", ["mixup", "bernoulli"])
def test_empirical_loss_zero_theta(method):
    d = toy_data()
    est = msda_empirical_loss(RngStream(2), GlmModel(np.zeros(3)), LOGISTIC, d, flat_spec(method, 3), draws=1000)
    assert est.value == pytest.approx(np.log(2), abs=1e-15)
    assert est.se == pytest.approx(0.0, abs=1e-15)


def test_empirical_loss_deterministic_and_checked():
    d = toy_data()
    model = GlmModel([0.5, 0.5, 0.5])
    a = msda_empirical_loss(RngStream(3), model, LOGISTIC, d, flat_spec("bernoulli", 3), 5000)
    b = msda_empirical_loss(RngStream(3), model, LOGISTIC, d, flat_spec("bernoulli", 3), 5000)
    assert a == b
    with pytest.raises(ParameterError):
        msda_empirical_loss(RngStream(3), model, LOGISTIC, d, flat_spec("mixup", 3), 0)
    with pytest.raises(ShapeError):
        msda_empirical_loss(RngStream(3), model, LOGISTIC, d, flat_spec("mixup", 2), 10)


def test_empirical_matches_brute_force_double_sum():
    # mixup with a fixed lambda: E over (i, j) is an exact finite double sum
    d = toy_data(m=12)
    model = GlmModel([0.9, -0.4, 0.2], 0.05)
    lam = 0.3
    Xm = lam * d.X[:, None, :] + (1 - lam) * d.X[None, :, :]
    ym = lam * d.y[:, None] + (1 - lam) * d.y[None, :]
    f = Xm @ model.theta + model.bias
    exact = np.mean(np.logaddexp(0, f) - ym * f)
    est = msda_empirical_loss(RngStream(4), model, LOGISTIC, d, flat_spec("mixup", 3), 200_000, lam=lam)
    assert abs(est.value - exact) <= 4 * est.se


def test_approx_glm_r3_zero_and_total():
    d = toy_data()
    br = approx_loss(GlmModel([1.0, -2.0, 0.5], 0.3), LOGISTIC, d, flat_spec("bernoulli", 3))
    assert br.R3 == 0.0
    assert br.total == br.L_m + br.R1 + br.R2 + br.R3


def test_approx_zero_theta():
    d = toy_data()
    br = approx_loss(GlmModel(np.zeros(3)), LOGISTIC, d, flat_spec("mixup", 3))
    assert br.L_m == pytest.approx(np.log(2), abs=1e-15)
    assert br.R1 == 0.0 and br.R2 == 0.0 and br.total == pytest.approx(np.log(2), abs=1e-15)


def test_approx_preconditions():
    raw = Dataset(np.array([[1.0, 2.0], [3.0, 5.0]]), [0, 1])
    with pytest.raises(PreconditionError):
        approx_loss(GlmModel([1.0, 1.0]), LOGISTIC, raw, flat_spec("mixup"))
    with pytest.raises(ShapeError):
        approx_loss(GlmModel([1.0, 1.0]), LOGISTIC, center_dataset(raw), flat_spec("mixup"), np.zeros((3, 3)))


def test_r2_by_hand_for_mixup_and_bernoulli():
    d = toy_data()
    model = GlmModel([1.1, -0.7, 0.4], -0.2)
    f = model.predict(d.X)
    s2 = LOGISTIC.d2h(f)
    t = model.theta
    abars = {"mixup": np.full((3, 3), 1 / 6), "bernoulli": np.full((3, 3), 1 / 6) + np.eye(3) / 6}
    vals = {}
    for method, abar in abars.items():
        assert np.allclose(expected_coeff_matrix(flat_spec(method, 3)), abar, atol=1e-15)
        per = [t @ (abar * d.second_moment) @ t + (t * x) @ abar @ (t * x) for x in d.X]
        vals[method] = approx_loss(model, LOGISTIC, d, flat_spec(method, 3)).R2
        assert vals[method] == pytest.approx(0.5 * np.mean(s2 * np.array(per)), rel=1e-12)
    assert vals["bernoulli"] > vals["mixup"]


def test_r1_sign_two_paths():
    d = toy_data()
    # unregularised optimum by Newton's method on L_m
    p = np.zeros(4)
    ext = np.hstack([d.X, np.ones((d.m, 1))])
    for _ in range(30):
        s = LOGISTIC.dh(ext @ p)
        H = ext.T @ (ext * (s * (1 - s))[:, None]) / d.m
        p -= np.linalg.solve(H, ext.T @ (s - d.y) / d.m)
    model = GlmModel.from_params(p)
    br = approx_loss(model, LOGISTIC, d, flat_spec("mixup", 3))
    resid = d.y - LOGISTIC.dh(model.predict(d.X))
    assert np.max(np.abs(ext.T @ resid)) < 1e-10
    by_loop = sum(r * (model.theta @ x) for r, x in zip(resid, d.X)) / d.m * (1 / 3)
    assert br.R1 == pytest.approx(by_loop, abs=1e-14)


def test_two_layer_net_r3_zero():
    rng = RngStream(5)
    net = TwoLayerNet.random(rng, 3, 6)
    br = approx_loss(net, LOGISTIC, toy_data(), flat_spec("bernoulli", 3))
    assert br.R3 == 0.0 and np.isfinite(br.total)


def test_no_mixing_limit_both_engines_give_lm():
    d = toy_data()
    model = GlmModel([0.3, 0.8, -0.5], 0.2)
    spec = flat_spec("mixup", 3, beta=BetaParams(1e12, 1e-12))
    assert tilde_lambda_moment(spec.beta, 1) < 1e-20
    br = approx_loss(model, LOGISTIC, d, spec, expected_coeffs=np.zeros((3, 3)))
    assert br.total == pytest.approx(br.L_m, abs=1e-12)
    est = msda_empirical_loss(RngStream(6), model, LOGISTIC, d, spec, d.m * 3, lam=1.0)
    assert est.value == pytest.approx(br.L_m, abs=1e-12)


def _fd_grad(model, d, spec, h=1e-6):
    p = model.params()
    g = np.empty_like(p)
    for i in range(p.size):
        e = np.zeros_like(p)
        e[i] = h
        up = approx_loss(GlmModel.from_params(p + e), LOGISTIC, d, spec).total
        dn = approx_loss(GlmModel.from_params(p - e), LOGISTIC, d, spec).total
        g[i] = (up - dn) / (2 * h)
    return g


@pytest.mark.parametrize("method", ["mixup", "bernoulli"])
def test_gradient_matches_finite_differences(method):
    d = toy_data()
    spec = flat_spec(method, 3)
    rng = np.random.default_rng(7)
    for _ in range(20):
        model = GlmModel(rng.normal(scale=1.5, size=3), rng.normal())
        g = approx_loss_grad(model, LOGISTIC, d, spec)
        fd = _fd_grad(model, d, spec)
        assert np.linalg.norm(g - fd) <= 1e-5 * np.linalg.norm(fd)


def test_gradient_lm_part_at_zero():
    d = toy_data()
    # balance the labels
    keep = np.concatenate([np.flatnonzero(d.y == 0)[:15], np.flatnonzero(d.y == 1)[:15]])
    bal = center_dataset(Dataset(d.X[keep], d.y[keep]))
    _, g = glm_approx_terms(np.zeros(3), 0.0, LOGISTIC, bal.X, bal.y, bal.second_moment, np.zeros((3, 3)), 0.0)
    expect = -(bal.X.T @ (bal.y - 0.5)) / bal.m
    assert np.allclose(g[:-1], expect, atol=1e-15)
    assert g[-1] == pytest.approx(0.0, abs=1e-15)


def test_gradient_r2_vanishes_without_variance():
    X = np.zeros((6, 2))
    y = np.array([0, 1, 0, 1, 1, 0], float)
    theta = np.array([0.4, -1.3])
    abar = np.full((2, 2), 1 / 6) + np.eye(2) / 6
    _, with_r2 = glm_approx_terms(theta, 0.2, LOGISTIC, X, y, np.zeros((2, 2)), abar, 1 / 3)
    _, without = glm_approx_terms(theta, 0.2, LOGISTIC, X, y, np.zeros((2, 2)), np.zeros((2, 2)), 1 / 3)
    assert np.array_equal(with_r2, without)


def test_gradient_needs_glm():
    with pytest.raises(ShapeError):
        approx_loss_grad(TwoLayerNet.random(RngStream(1), 3, 2), LOGISTIC, toy_data(), flat_spec("mixup", 3))


def test_breakdown_json():
    br = LossBreakdown(0.5, 0.1, 0.05, 0.0, se=0.01)
    out = json.loads(json.dumps(br.to_json()))
    assert out["total"] == pytest.approx(0.65) and out["standard_error"] == 0.01


def test_trained_two_moons_mixup_empirical_within_5pct_of_approx():
    from msdalab.experiments import run_two_moons

    rep = run_two_moons("original", "mixup", seed=7, gap_draws=100_000)
    assert rep.loss_gap_relative <= 0.05, (
        f"empirical {rep.original_loss:.4f} vs approximate {rep.approximate_loss:.4f}"
    )
