"""Exact MSDA loss (Monte Carlo) and its quadratic approximation.

The approximation is  L_m + R1 + R2 + R3  with

    R1 = 1/m  sum_i (y_i - h'(f_i)) (grad f_i . x_i) E[1 - lam]
    R2 = 1/2m sum_i h''(f_i) sum_jk abar_jk d_j f_i d_k f_i (Sigma_jk + x_ij x_ik)
    R3 = 1/2m sum_i (h'(f_i) - y_i) sum_jk abar_jk d2_jk f_i (Sigma_jk + x_ij x_ik)

where expectations over lam use the tilde-lambda mixture, abar is the
averaged coefficient matrix and Sigma the second moment of the (centred)
inputs.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .coefficients import expected_coeff_matrix
from .errors import ParameterError, PreconditionError, ShapeError
from .masks import GridShape, MaskSpec, sample_masks
from .mixer import Sample, mix_arrays
from .models import GlmModel, LossFamily, point_loss
from .stochastics import RngStream, tilde_lambda_moment

CENTER_TOL = 1e-9
_LOSS_CHUNK = 1 << 15


@dataclass(frozen=True)
class Dataset:
    """Inputs ``X`` (m x d) and binary soft labels ``y`` (probability of class 1)."""

    X: np.ndarray
    y: np.ndarray
    shape: GridShape | None = None

    def __post_init__(self):
        X = np.atleast_2d(np.asarray(self.X, dtype=float))
        y = np.asarray(self.y, dtype=float).ravel()
        if X.shape[0] != y.size:
            raise ShapeError(f"{X.shape[0]} inputs but {y.size} labels")
        if X.shape[0] == 0:
            raise ParameterError("dataset is empty")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)

    @property
    def m(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]

    @cached_property
    def mean(self) -> np.ndarray:
        return self.X.mean(axis=0)

    @cached_property
    def second_moment(self) -> np.ndarray:
        return self.X.T @ self.X / self.m

    @property
    def centered(self) -> bool:
        return bool(np.abs(self.mean).max() <= CENTER_TOL)

    @property
    def samples(self) -> list[Sample]:
        return [Sample(x, [t]) for x, t in zip(self.X, self.y)]


def center_dataset(d: Dataset) -> Dataset:
    if d.m == 0:
        raise ParameterError("dataset is empty")
    return Dataset(d.X - d.mean, d.y, d.shape)


@dataclass
class LossBreakdown:
    L_m: float
    R1: float
    R2: float
    R3: float
    se: float | None = None
    total: float = field(init=False)

    def __post_init__(self):
        self.total = self.L_m + self.R1 + self.R2 + self.R3

    def to_json(self) -> dict:
        out = {"L_m": self.L_m, "R1": self.R1, "R2": self.R2, "R3": self.R3, "total": self.total}
        if self.se is not None:
            out["standard_error"] = self.se
        return out


@dataclass(frozen=True)
class MCEstimate:
    value: float
    se: float
    draws: int


def _balanced_indices(gen: np.random.Generator, m: int, draws: int) -> np.ndarray:
    # concatenated permutations: each index appears floor(draws/m) or +1 times
    reps = -(-draws // m)
    return np.concatenate([gen.permutation(m) for _ in range(reps)])[:draws]


def msda_empirical_loss(
    rng: RngStream,
    model,
    family: LossFamily,
    d: Dataset,
    spec: MaskSpec,
    draws: int,
    lam: float | None = None,
) -> MCEstimate:
    """Monte-Carlo estimate of E_{i,j} E_lam E_M l(theta, mixed sample).

    ``j`` is uniform with replacement; ``i`` cycles through random
    permutations so every sample is used equally often (an unbiased,
    stratified version of uniform ``i``).  ``lam`` pins the ratio.
    """
    if draws < 1:
        raise ParameterError("draws must be >= 1")
    if spec.shape.n_coords != d.d:
        raise ShapeError(f"mask has {spec.shape.n_coords} coordinates, data has {d.d}")
    gen = rng.generator
    first = _balanced_indices(gen, d.m, draws)
    second = gen.integers(0, d.m, size=draws)
    losses = np.empty(draws)
    for start in range(0, draws, _LOSS_CHUNK):
        sl = slice(start, min(draws, start + _LOSS_CHUNK))
        i, j = first[sl], second[sl]
        batch = sample_masks(rng, spec, i.size, lam=lam)
        x, y = mix_arrays(d.X[i], d.X[j], d.y[i], d.y[j], batch.values, batch.lams)
        losses[sl] = point_loss(family, model.predict(x), y)
    se = float(losses.std(ddof=1) / np.sqrt(draws)) if draws > 1 else 0.0
    return MCEstimate(float(np.mean(losses)), se, draws)


def _require_centered(d: Dataset):
    if not d.centered:
        raise PreconditionError(
            f"approximate loss needs centred inputs (max |mean| = {np.abs(d.mean).max():.3g}); call center_dataset"
        )


def _abar(spec: MaskSpec, d: Dataset, expected_coeffs):
    abar = expected_coeff_matrix(spec) if expected_coeffs is None else np.asarray(expected_coeffs, dtype=float)
    if abar.shape != (d.d, d.d):
        raise ShapeError(f"coefficient matrix {abar.shape} does not match {d.d} coordinates")
    return abar


def approx_loss(model, family: LossFamily, d: Dataset, spec: MaskSpec, expected_coeffs=None) -> LossBreakdown:
    _require_centered(d)
    abar = _abar(spec, d, expected_coeffs)
    X, y = d.X, d.y
    f = model.predict(X)
    g = model.input_grad(X)
    e1 = tilde_lambda_moment(spec.beta, 1)
    sig = d.second_moment

    L_m = float(np.mean(point_loss(family, f, y)))
    R1 = float(np.mean((y - family.dh(f)) * np.einsum("ij,ij->i", g, X)) * e1)
    gx = g * X
    quad = np.einsum("ij,jk,ik->i", g, abar * sig, g) + np.einsum("ij,jk,ik->i", gx, abar, gx)
    R2 = float(0.5 * np.mean(family.d2h(f) * quad))
    H = model.input_hessian(X)
    if np.any(H):
        hq = np.einsum("ijk,jk->i", H, abar * sig) + np.einsum("ij,ijk,ik->i", X, H * abar, X)
        R3 = float(0.5 * np.mean((family.dh(f) - y) * hq))
    else:
        R3 = 0.0
    return LossBreakdown(L_m, R1, R2, R3)


def glm_approx_terms(theta, bias, family: LossFamily, X, y, sigma, abar, e1, grad: bool = True):
    """Approximate loss of a GLM on rows ``X`` and its ``(theta, bias)`` gradient.

    ``sigma`` is the input second moment of the full (centred) dataset, so the
    function also serves mini-batches.  Returns ``(total, gradient or None)``.
    """
    m = X.shape[0]
    f = X @ theta + bias
    s1, s2 = family.dh(f), family.d2h(f)
    score = X @ theta
    B0 = abar * sigma
    tx = X * theta
    quad = theta @ B0 @ theta + np.einsum("ij,jk,ik->i", tx, abar, tx)
    total = float(np.mean(point_loss(family, f, y)) + e1 * np.mean((y - s1) * score) + 0.5 * np.mean(s2 * quad))
    if not grad:
        return total, None
    s3 = family.third(f)
    ext = np.hstack([X, np.ones((m, 1))])  # df/d(theta, bias)
    g_lm = ext.T @ (s1 - y) / m
    g_r1 = e1 * (ext.T @ (-s2 * score) + np.append(X.T @ (y - s1), 0.0)) / m
    # d quad_i / d theta = 2 (B0 theta + x_i * (abar (theta * x_i)))
    dquad = 2.0 * (B0 @ theta + X * (tx @ abar.T))
    g_r2 = 0.5 * (ext.T @ (s3 * quad) + np.append(dquad.T @ s2, 0.0)) / m
    return total, g_lm + g_r1 + g_r2


def approx_loss_grad(model: GlmModel, family: LossFamily, d: Dataset, spec: MaskSpec, expected_coeffs=None) -> np.ndarray:
    """Gradient of L_m + R1 + R2 with respect to ``(theta, bias)`` for a GLM."""
    if not isinstance(model, GlmModel):
        raise ShapeError("analytic gradient is defined for GlmModel only")
    _require_centered(d)
    abar = _abar(spec, d, expected_coeffs)
    e1 = tilde_lambda_moment(spec.beta, 1)
    _, g = glm_approx_terms(model.theta, model.bias, family, d.X, d.y, d.second_moment, abar, e1)
    return g
