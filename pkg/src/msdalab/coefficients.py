"""Regularisation coefficients a_jk = E_M[(1 - M_j)(1 - M_k)].

Closed forms are evaluated at a fixed ratio ``lam``; :func:`coeff_closed_expected`
averages them over the tilde-lambda mixture, and :func:`coeff_monte_carlo`
estimates them directly from sampled masks.

Coordinates follow :mod:`msdalab.masks`: integers are 0-based flat positions,
tuples are 1-based ``(row, col)`` pixels.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import partial

import numpy as np
from scipy import special

from .errors import NumericalAccuracyError, ParameterError, ShapeError, SizeError
from .masks import MaskSpec, cutmix_side, hmix_fill, hmix_side, pixel_position, sample_masks
from .stochastics import (
    RngStream,
    ordered_sum,
    run_chunked,
    tilde_lambda_components,
    tilde_lambda_moment,
)

MAX_FULL_COORDS = 4096
QUAD_NODES = 64


@dataclass
class CoeffMatrix:
    """Coefficients for a full ``d x d`` matrix or for a list of pairs.

    ``entries`` is ``(d, d)`` when ``pairs`` is None, else one value per pair.
    ``se`` holds per-entry standard errors for Monte-Carlo estimates.
    """

    entries: np.ndarray
    lam: float | str
    provenance: str
    samples: int = 0
    se: np.ndarray | None = None
    pairs: np.ndarray | None = None


def _positions(coord, spec: MaskSpec) -> np.ndarray:
    if isinstance(coord, tuple):
        return np.asarray(pixel_position(coord[0], coord[1], spec.shape.n))
    pos = np.asarray(coord)
    if np.any(pos < 0) or np.any(pos >= spec.shape.n_coords):
        raise ParameterError("coordinate outside the grid")
    return pos.astype(int)


def _pixel_1based(pos: np.ndarray, n: int):
    r, c = np.divmod(pos, n)
    return r + 1, c + 1


def _overlap_1d(j, k, s, n):
    h = lambda t: np.minimum(t, n - s)  # noqa: E731
    lo = lambda t: np.maximum(t - s, 0)  # noqa: E731
    return np.maximum(np.minimum(h(j) - lo(k), h(k) - lo(j)), 0)


def box_pair_prob(j, k, s: int, n: int):
    """P(both pixels inside the s x s box) for 0-based flat positions j, k."""
    if s >= n:
        return np.ones(np.broadcast(j, k).shape)
    j1, j2 = _pixel_1based(np.asarray(j), n)
    k1, k2 = _pixel_1based(np.asarray(k), n)
    return _overlap_1d(j1, k1, s, n) * _overlap_1d(j2, k2, s, n) / float((n - s) ** 2)


def box_cover_prob(j, s: int, n: int):
    """P(pixel inside the s x s box)."""
    return box_pair_prob(j, j, s, n)


def _closed_at(spec: MaskSpec, lam: float, j: np.ndarray, k: np.ndarray) -> np.ndarray:
    m = spec.method
    shape = np.broadcast(j, k).shape
    if m == "mixup":
        return np.full(shape, (1.0 - lam) ** 2)
    if m == "bernoulli":
        return np.where(j == k, 1.0 - lam, (1.0 - lam) ** 2)
    n = spec.shape.n
    if m == "cutmix":
        return box_pair_prob(j, k, int(cutmix_side(lam, n)), n)
    if m == "stochastic":
        cut = box_pair_prob(j, k, int(cutmix_side(lam, n)), n)
        return spec.q * (1.0 - lam) ** 2 + (1.0 - spec.q) * cut
    if m == "hmix":
        s = int(hmix_side(lam, spec.r, n))
        c = float(hmix_fill(lam, spec.r))
        both = box_pair_prob(j, k, s, n)
        cover = box_cover_prob(j, s, n) + box_cover_prob(k, s, n)
        return c * c * both + c * (1.0 - c) * cover + (1.0 - c) ** 2
    if m == "gmix":
        if lam >= 1.0:
            return np.zeros(shape)
        j1, j2 = _pixel_1based(np.asarray(j), n)
        k1, k2 = _pixel_1based(np.asarray(k), n)
        half_d2 = ((j1 - k1) ** 2 + (j2 - k2) ** 2) / 4.0
        return (1.0 - lam) * np.exp(-np.pi * half_d2 / ((1.0 - lam) * n * n))
    raise ParameterError(f"no closed form for {m!r}")


def coeff_closed(spec: MaskSpec, lam: float, j, k):
    """Closed-form a_jk at fixed ``lam``.

    Box families use the exact placement count of the offset sampler.  HMix
    uses the sampler's out-of-box value ``c = lam / (1 - (1 - lam) r)``:
    ``a = c^2 P(both in box) + c(1 - c)(P(j in) + P(k in)) + (1 - c)^2``.
    GMix is the continuum Gaussian ``(1 - lam) exp(-pi |(j - k)/2|^2 / ((1 - lam) n^2))``;
    :func:`gmix_grid_coeff` gives the finite-grid value the sampler realises.
    """
    if not 0.0 <= lam <= 1.0:
        raise ParameterError(f"lam must lie in [0, 1], got {lam}")
    jj, kk = _positions(j, spec), _positions(k, spec)
    out = _closed_at(spec, float(lam), jj, kk)
    return float(out) if out.ndim == 0 else out


def gmix_grid_coeff(lam: float, n: int, j, k):
    """Exact GMix coefficient with the centre uniform over the n^2 pixel centres."""
    j, k = np.asarray(j), np.asarray(k)
    if lam >= 1.0:
        return np.zeros(np.broadcast(j, k).shape)
    c = np.pi / (2.0 * (1.0 - lam) * n * n)
    p = np.arange(n)
    jr, jc = np.divmod(j, n)
    kr, kc = np.divmod(k, n)

    def axis(a, b):
        a, b = np.asarray(a)[..., None], np.asarray(b)[..., None]
        return np.mean(np.exp(-c * ((a - p) ** 2 + (b - p) ** 2)), axis=-1)

    return axis(jr, kr) * axis(jc, kc)


def coeff_matrix_closed(spec: MaskSpec, lam: float) -> CoeffMatrix:
    d = spec.shape.n_coords
    if d > MAX_FULL_COORDS:
        raise SizeError(f"full matrix over {d} coordinates exceeds {MAX_FULL_COORDS}")
    idx = np.arange(d)
    entries = _closed_at(spec, float(lam), idx[:, None], idx[None, :])
    return CoeffMatrix(entries=entries, lam=float(lam), provenance="closed_form")


def _breakpoints(spec: MaskSpec) -> list[float]:
    m = spec.method
    if m in ("cutmix", "stochastic"):
        n = spec.shape.n
        return [1.0 - (k / n) ** 2 for k in range(1, n)]
    if m == "hmix" and spec.r > 0:
        n = spec.shape.n
        pts = [1.0 - k * k / (spec.r * n * n) for k in range(1, n + 1)]
        return [p for p in pts if 0.0 < p < 1.0]
    return []


def _quad_piece(u: float, v: float, a: float, b: float, nodes: int):
    """Nodes/weights for  int_u^v g(lam) Beta(a, b) pdf dlam  (Gauss-Jacobi).

    Endpoint singularities of the Beta density are absorbed into the Jacobi
    weight on pieces touching 0 or 1; with zero exponents this is plain
    Gauss-Legendre.
    """
    ex_hi = b - 1.0 if v >= 1.0 else 0.0
    ex_lo = a - 1.0 if u <= 0.0 else 0.0
    x, w = special.roots_jacobi(nodes, ex_hi, ex_lo)
    half = (v - u) / 2.0
    lam = u + half * (1.0 + x)
    dens = np.ones_like(lam)
    if u <= 0.0:
        dens *= (v / 2.0) ** (a - 1.0)
    else:
        dens *= lam ** (a - 1.0)
    if v >= 1.0:
        dens *= ((1.0 - u) / 2.0) ** (b - 1.0)
    else:
        dens *= (1.0 - lam) ** (b - 1.0)
    weights = w * dens * half / special.beta(a, b)
    return lam, weights


def _expected_quadrature(spec: MaskSpec, j, k, nodes: int):
    cuts = [0.0] + sorted(_breakpoints(spec)) + [1.0]
    total = 0.0
    for wc, a, b in tilde_lambda_components(spec.beta):
        for u, v in zip(cuts[:-1], cuts[1:]):
            lams, weights = _quad_piece(u, v, a, b, nodes)
            for lam, w in zip(lams, weights):
                total = total + wc * w * _closed_at(spec, float(lam), j, k)
    return np.asarray(total, dtype=float)


def coeff_closed_expected(spec: MaskSpec, j, k, nodes: int = QUAD_NODES, rtol: float = 1e-6):
    """E over lam ~ tilde-D of the closed-form a_jk(lam).

    Exact moments for mixup and bernoulli; piecewise Gauss quadrature
    (split where the box side changes) otherwise, checked against a run with
    twice the nodes.
    """
    jj, kk = _positions(j, spec), _positions(k, spec)
    m = spec.method
    if m == "mixup":
        out = np.full(np.broadcast(jj, kk).shape, tilde_lambda_moment(spec.beta, 2))
    elif m == "bernoulli":
        out = np.where(jj == kk, tilde_lambda_moment(spec.beta, 1), tilde_lambda_moment(spec.beta, 2))
    else:
        out = _expected_quadrature(spec, jj, kk, nodes)
        fine = _expected_quadrature(spec, jj, kk, 2 * nodes)
        err = np.abs(fine - out)
        if np.any(err > rtol * np.abs(fine) + 1e-15):
            raise NumericalAccuracyError(
                f"quadrature did not converge: change {err.max():.3g} when doubling {nodes} nodes"
            )
    out = np.asarray(out, dtype=float)
    return float(out) if out.ndim == 0 else out


def expected_coeff_matrix(spec: MaskSpec) -> np.ndarray:
    """Full matrix of tilde-lambda-averaged coefficients."""
    d = spec.shape.n_coords
    if d > MAX_FULL_COORDS:
        raise SizeError(f"full matrix over {d} coordinates exceeds {MAX_FULL_COORDS}")
    idx = np.arange(d)
    return np.asarray(coeff_closed_expected(spec, idx[:, None], idx[None, :]), dtype=float).reshape(d, d)


def mc_chunk_size(d: int) -> int:
    """Masks per Monte-Carlo chunk; a function of the coordinate count only."""
    return int(min(8192, max(256, (1 << 21) // max(d, 1))))


def _mc_full(spec, lam, stream, count):
    u = 1.0 - sample_masks(stream, spec, count, lam=lam).values
    u2 = u * u
    return np.stack([u.T @ u, u2.T @ u2])


def _mc_pairs(spec, lam, j, k, stream, count):
    u = 1.0 - sample_masks(stream, spec, count, lam=lam).values
    prod = u[:, j] * u[:, k]
    return np.stack([prod.sum(axis=0), (prod * prod).sum(axis=0)])


def _mean_se(sums: np.ndarray, n: int):
    mean = sums[0] / n
    if n < 2:
        return mean, np.zeros_like(mean)
    var = np.maximum(sums[1] / n - mean * mean, 0.0) * n / (n - 1)
    return mean, np.sqrt(var / n)


def coeff_monte_carlo(
    rng: RngStream,
    spec: MaskSpec,
    lam: float | str,
    samples: int,
    pairs="full",
    threads: int = 1,
) -> CoeffMatrix:
    """Empirical mean of (1 - M_j)(1 - M_k) over ``samples`` masks.

    ``lam`` is a fixed ratio or ``"draw"`` to sample it per mask.  ``pairs``
    is ``"full"`` or a sequence of coordinate pairs.
    """
    if samples < 1:
        raise ParameterError("samples must be >= 1")
    fixed = None if lam == "draw" else float(lam)
    d = spec.shape.n_coords
    chunk = mc_chunk_size(d)
    if isinstance(pairs, str):
        if pairs != "full":
            raise ParameterError(f"pairs must be 'full' or a list of pairs, got {pairs!r}")
        if d > MAX_FULL_COORDS:
            raise SizeError(f"full matrix over {d} coordinates exceeds {MAX_FULL_COORDS}; pass pairs")
        parts = run_chunked(rng, samples, partial(_mc_full, spec, fixed), threads, chunk)
        mean, se = _mean_se(ordered_sum(parts), samples)
        return CoeffMatrix(mean, lam, "monte_carlo", samples, se)
    pos = np.array([[_positions(a, spec), _positions(b, spec)] for a, b in pairs], dtype=int)
    if pos.ndim != 2 or pos.shape[1] != 2:
        raise ShapeError("pairs must be a sequence of (j, k)")
    parts = run_chunked(rng, samples, partial(_mc_pairs, spec, fixed, pos[:, 0], pos[:, 1]), threads, chunk)
    mean, se = _mean_se(ordered_sum(parts), samples)
    return CoeffMatrix(mean, lam, "monte_carlo", samples, se, pairs=pos)


@dataclass
class Heatmap:
    """Offset map; ``values[dy + n - 1, dx + n - 1]`` for offsets in (-n, n)."""

    n: int
    values: np.ndarray
    se: np.ndarray | None = None

    def at(self, dx: int, dy: int) -> float:
        return float(self.values[dy + self.n - 1, dx + self.n - 1])

    def rows(self):
        """``(dx, dy, value)`` triples, dy-major then dx."""
        n = self.n
        for dy in range(-n + 1, n):
            for dx in range(-n + 1, n):
                yield dx, dy, float(self.values[dy + n - 1, dx + n - 1])


def _valid_bases(n: int, dx: int, dy: int):
    rows = np.arange(max(0, -dy), min(n, n - dy))
    cols = np.arange(max(0, -dx), min(n, n - dx))
    base = (rows[:, None] * n + cols[None, :]).ravel()
    return base, base + dy * n + dx


def _autocorr_sums(spec, lam, stream, count):
    n = spec.shape.n
    u = (1.0 - sample_masks(stream, spec, count, lam=lam).values).reshape(count, n, n)
    f = np.fft.rfft2(u, s=(2 * n, 2 * n))
    corr = np.fft.irfft2(f.conj() * f, s=(2 * n, 2 * n))
    # corr[dy, dx] = sum_i u_i u_{i + (dy, dx)}; reorder to dy, dx = -n+1 .. n-1
    idx = np.r_[n + 1 : 2 * n, 0:n]
    corr = corr[:, idx][:, :, idx]
    counts = np.outer(n - np.abs(np.arange(-n + 1, n)), n - np.abs(np.arange(-n + 1, n)))
    heat = corr / counts
    return np.stack([heat.sum(axis=0), (heat * heat).sum(axis=0)])


def offset_heatmap(
    spec: MaskSpec,
    lam: float,
    mode: str = "closed",
    rng: RngStream | None = None,
    samples: int = 0,
    threads: int = 1,
) -> Heatmap:
    """heat(dx, dy) = mean over in-grid base pixels i of a_{i, i + (dx, dy)}.

    ``dx`` shifts columns, ``dy`` shifts rows.
    """
    if spec.shape.kind != "square":
        raise ShapeError("offset heatmaps need a square grid")
    n = spec.shape.n
    if mode == "closed":
        out = np.empty((2 * n - 1, 2 * n - 1))
        for dy in range(-n + 1, n):
            for dx in range(-n + 1, n):
                j, k = _valid_bases(n, dx, dy)
                out[dy + n - 1, dx + n - 1] = np.mean(_closed_at(spec, float(lam), j, k))
        return Heatmap(n, out)
    if mode == "mc":
        if rng is None or samples < 1:
            raise ParameterError("Monte-Carlo heatmaps need an rng and samples >= 1")
        chunk = mc_chunk_size(4 * n * n)
        parts = run_chunked(rng, samples, partial(_autocorr_sums, spec, float(lam)), threads, chunk)
        mean, se = _mean_se(ordered_sum(parts), samples)
        return Heatmap(n, mean, se)
    raise ParameterError(f"mode must be 'closed' or 'mc', got {mode!r}")
