import numpy as np
import pytest

from msdalab.errors import NotPSDError, ParameterError, ShapeError, SizeError
from msdalab.stochastics import RngStream
from msdalab.synthesis import TargetSpec, psd_sqrt, synthesize_mask_sampler, verify_synthesis


def bernoulli_target(lam, d):
    A = np.full((d, d), (1 - lam) ** 2)
    np.fill_diagonal(A, 1 - lam)
    return A


def test_psd_sqrt_examples():
    assert np.allclose(psd_sqrt(np.eye(3)), np.eye(3), atol=1e-15)
    assert np.array_equal(psd_sqrt(np.zeros((2, 2))), np.zeros((2, 2)))
    R = psd_sqrt(np.diag([4.0, 9.0]))
    assert np.allclose(R, np.diag([2.0, 3.0]), atol=1e-14)


def test_psd_sqrt_random_rank_deficient():
    rng = np.random.default_rng(0)
    B = rng.normal(size=(12, 5))
    S = B @ B.T
    R = psd_sqrt(S)
    assert np.array_equal(R, R.T)
    assert np.max(np.abs(R @ R - S)) <= 1e-8 * np.max(np.abs(S))


def test_psd_sqrt_errors():
    with pytest.raises(NotPSDError) as exc:
        psd_sqrt(np.diag([1.0, -0.5]))
    assert exc.value.eigenvalue == pytest.approx(-0.5)
    with pytest.raises(ParameterError):
        psd_sqrt(np.array([[1.0, 0.2], [0.1, 1.0]]))
    with pytest.raises(ShapeError):
        psd_sqrt(np.ones((2, 3)))
    with pytest.raises(SizeError):
        psd_sqrt(np.eye(257))


def test_tolerance_clamps_small_negatives():
    S = np.diag([1.0, -1e-10])
    assert np.allclose(psd_sqrt(S), np.diag([1.0, 0.0]))
    with pytest.raises(NotPSDError):
        psd_sqrt(np.diag([1.0, -1e-6]))
    psd_sqrt(np.diag([1.0, -1e-6]), tol=1e-5)


def test_target_validation():
    with pytest.raises(ParameterError):
        TargetSpec(1.0, np.eye(2))
    with pytest.raises(ShapeError):
        TargetSpec(0.5, np.ones((2, 3)))


def test_mixup_target_gives_deterministic_sampler():
    lam = 0.3
    sampler = synthesize_mask_sampler(TargetSpec(lam, np.full((4, 4), (1 - lam) ** 2)))
    draws = sampler.sample(RngStream(1), 10)
    assert np.allclose(draws, lam, atol=1e-15)


def test_bernoulli_target_d8():
    lam = 0.5
    target = TargetSpec(lam, bernoulli_target(lam, 8))
    sampler = synthesize_mask_sampler(target)
    rep = verify_synthesis(sampler, target, RngStream(2), 1_000_000)
    assert rep["max_z_coefficient"] <= 4.0
    assert rep["max_z_mean"] <= 4.0
    assert rep["psd_margin"] >= 0


def test_sampler_values_unbounded():
    lam = 0.5
    sampler = synthesize_mask_sampler(TargetSpec(lam, bernoulli_target(lam, 4)))
    draws = sampler.sample(RngStream(3), 1000)
    assert draws.min() < 0 or draws.max() > 1


def test_not_psd_target_propagates():
    # off-diagonals above the diagonal cannot come from any mask law
    A = np.array([[0.3, 0.5], [0.5, 0.3]])
    with pytest.raises(NotPSDError):
        synthesize_mask_sampler(TargetSpec(0.5, A))


def test_draw_and_determinism():
    lam = 0.4
    sampler = synthesize_mask_sampler(TargetSpec(lam, bernoulli_target(lam, 3)))
    a = sampler.draw(RngStream(4))
    b = sampler.draw(RngStream(4))
    assert np.array_equal(a.values, b.values) and a.lam == lam


def test_verify_thread_invariant():
    lam = 0.5
    target = TargetSpec(lam, bernoulli_target(lam, 4))
    sampler = synthesize_mask_sampler(target)
    one = verify_synthesis(sampler, target, RngStream(5), 50_000, threads=1)
    four = verify_synthesis(sampler, target, RngStream(5), 50_000, threads=4)
    assert one == four
