"""Real-valued masks that realise a prescribed coefficient matrix.

Given a ratio lam and a symmetric target A with S = A - (1 - lam)^2 11^T
positive semidefinite, the sampler ``M = lam 1 + R Z`` (R the symmetric
root of S, Z standard normal) satisfies E[M] = lam 1 and
E[(1 - M_j)(1 - M_k)] = (1 - lam)^2 + S_jk = A_jk.  Values are unbounded.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import partial

import numpy as np

from .errors import NotPSDError, ParameterError, ShapeError, SizeError
from .masks import GridShape, Mask
from .stochastics import RngStream, ordered_sum, run_chunked, std_normal_vector

MAX_DENSE = 256


def psd_sqrt(S: np.ndarray, tol: float | None = None) -> np.ndarray:
    """Symmetric square root via eigendecomposition.

    Eigenvalues in [-tol, 0) are clamped to zero; anything below -tol raises
    :class:`NotPSDError`.  ``tol`` defaults to 1e-8 times the largest diagonal entry.
    """
    S = np.asarray(S, dtype=float)
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise ShapeError(f"expected a square matrix, got shape {S.shape}")
    if S.shape[0] > MAX_DENSE:
        raise SizeError(f"dense root limited to {MAX_DENSE} coordinates")
    scale = max(np.abs(S).max(), 1.0) if S.size else 1.0
    if np.abs(S - S.T).max(initial=0.0) > 1e-10 * scale:
        raise ParameterError("matrix is not symmetric")
    if tol is None:
        tol = 1e-8 * max(float(np.max(np.diag(S), initial=0.0)), 0.0)
    evals, evecs = np.linalg.eigh((S + S.T) / 2.0)
    lowest = float(evals.min(initial=0.0))
    if lowest < -tol:
        raise NotPSDError(lowest, tol)
    root = (evecs * np.sqrt(np.clip(evals, 0.0, None))) @ evecs.T
    return (root + root.T) / 2.0


@dataclass(frozen=True)
class TargetSpec:
    lam: float
    A: np.ndarray

    def __post_init__(self):
        A = np.asarray(self.A, dtype=float)
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise ShapeError(f"target must be square, got shape {A.shape}")
        if not 0.0 < self.lam < 1.0:
            raise ParameterError(f"lam must lie in (0, 1), got {self.lam}")
        object.__setattr__(self, "A", A)

    @property
    def residual(self) -> np.ndarray:
        """A - (1 - lam)^2 11^T."""
        return self.A - (1.0 - self.lam) ** 2


@dataclass(frozen=True)
class MaskSynthesizer:
    lam: float
    root: np.ndarray
    psd_margin: float

    @property
    def d(self) -> int:
        return self.root.shape[0]

    def sample(self, rng: RngStream, count: int) -> np.ndarray:
        z = std_normal_vector(rng, self.d, size=count)
        return self.lam + z @ self.root.T

    def draw(self, rng: RngStream) -> Mask:
        values = self.lam + self.root @ std_normal_vector(rng, self.d)
        return Mask(values, self.lam, GridShape.flat(self.d), "synthesized")


def synthesize_mask_sampler(spec: TargetSpec, tol: float | None = None) -> MaskSynthesizer:
    S = spec.residual
    root = psd_sqrt(S, tol)
    margin = float(np.linalg.eigvalsh((S + S.T) / 2.0).min())
    return MaskSynthesizer(spec.lam, root, margin)


def _moment_sums(sampler: MaskSynthesizer, stream: RngStream, count: int):
    m = sampler.sample(stream, count)
    u = 1.0 - m
    outer = u[:, :, None] * u[:, None, :]
    return {
        "m": m.sum(axis=0),
        "m2": (m * m).sum(axis=0),
        "uu": outer.sum(axis=0),
        "uu2": (outer * outer).sum(axis=0),
    }


def _zscore(err, se):
    err = np.abs(err)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(se > 0, err / se, np.where(err > 0, np.inf, 0.0))


def verify_synthesis(
    sampler: MaskSynthesizer, target: TargetSpec, rng: RngStream, samples: int, threads: int = 1
) -> dict:
    """Monte-Carlo check of the mean and coefficient laws.

    Returns a JSON-ready report: coefficient errors and z-scores against the
    target, mean errors against lam, and the PSD margin.
    """
    chunk = max(256, min(8192, (1 << 20) // max(sampler.d**2, 1)))
    parts = run_chunked(rng, samples, partial(_moment_sums, sampler), threads, chunk)
    sums = {key: ordered_sum([p[key] for p in parts]) for key in parts[0]}
    n = samples

    def mean_se(s1, s2):
        mean = s1 / n
        var = np.maximum(s2 / n - mean * mean, 0.0) * n / max(n - 1, 1)
        return mean, np.sqrt(var / n)

    coeff, coeff_se = mean_se(sums["uu"], sums["uu2"])
    mean, mean_se_ = mean_se(sums["m"], sums["m2"])
    err = coeff - target.A
    z = _zscore(err, coeff_se)
    worst = np.unravel_index(int(np.argmax(np.abs(err))), err.shape)
    mz = _zscore(mean - target.lam, mean_se_)
    return {
        "samples": int(samples),
        "lambda": float(target.lam),
        "d": int(sampler.d),
        "max_abs_error": float(np.abs(err).max()),
        "worst_entry": [int(worst[0]), int(worst[1])],
        "max_z_coefficient": float(z.max()),
        "max_abs_mean_error": float(np.abs(mean - target.lam).max()),
        "max_z_mean": float(mz.max()),
        "psd_margin": sampler.psd_margin,
        "empirical_coefficients": coeff.tolist(),
        "coefficient_se": coeff_se.tolist(),
    }
