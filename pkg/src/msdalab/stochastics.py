"""Seedable random sources and the mixing-ratio distributions.

Streams are backed by the Philox4x64 counter-based generator. A stream is
keyed by the 128-bit value ``seed | stream_id << 64``, so two streams with
distinct ``(seed, stream_id)`` pairs never share a key, and a given pair
yields the same draws on every platform numpy supports.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Sequence, TypeVar

import numpy as np

from .errors import ParameterError, UnsupportedMomentError

_MASK64 = (1 << 64) - 1

# Monte-Carlo work is cut into chunks of this many draws; chunk c always runs
# on substream c, so results do not depend on how many workers are used.
MC_CHUNK = 8192

T = TypeVar("T")


def _splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return x ^ (x >> 31)


class RngStream:
    """A single-owner random stream identified by ``(seed, stream_id)``."""

    def __init__(self, seed: int, stream_id: int = 0):
        seed, stream_id = int(seed), int(stream_id)
        if not (0 <= seed <= _MASK64 and 0 <= stream_id <= _MASK64):
            raise ParameterError("seed and stream_id must be unsigned 64-bit integers")
        self.seed = seed
        self.stream_id = stream_id
        self.generator = np.random.Generator(np.random.Philox(key=seed | (stream_id << 64)))

    def spawn(self, index: int) -> "RngStream":
        """Child stream derived from this stream's identity (not its state)."""
        child = _splitmix64(self.stream_id ^ _splitmix64(int(index) + 1))
        return RngStream(self.seed, child)

    def __repr__(self) -> str:
        return f"RngStream(seed={self.seed}, stream_id={self.stream_id})"


@dataclass(frozen=True)
class BetaParams:
    alpha: float
    beta: float

    def __post_init__(self):
        if not (np.isfinite(self.alpha) and np.isfinite(self.beta)) or self.alpha <= 0 or self.beta <= 0:
            raise ParameterError(f"Beta parameters must be positive, got ({self.alpha}, {self.beta})")


def _check(p) -> BetaParams:
    return p if isinstance(p, BetaParams) else BetaParams(*p)


def _beta_draw(gen: np.random.Generator, a: np.ndarray | float, b: np.ndarray | float, size):
    # Two-gamma ratio; numpy's standard_gamma is the Marsaglia-Tsang squeeze
    # with the U**(1/a) boost for shape < 1, valid over the whole range.
    x = gen.standard_gamma(a, size)
    y = gen.standard_gamma(b, size)
    total = x + y
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.where(total > 0, x / np.where(total > 0, total, 1.0), 0.5)
    return out


def beta_sample(rng: RngStream, p: BetaParams, size=None):
    """Draw from Beta(alpha, beta). ``size=None`` returns a float."""
    p = _check(p)
    out = _beta_draw(rng.generator, p.alpha, p.beta, size)
    return float(out) if size is None else out


def tilde_lambda_sample(rng: RngStream, p: BetaParams, size=None):
    """Draw from the mixture  a/(a+b) Beta(a+1, b) + b/(a+b) Beta(b+1, a)."""
    p = _check(p)
    a, b = p.alpha, p.beta
    gen = rng.generator
    first = gen.random(size) < a / (a + b)
    shape1 = np.where(first, a + 1.0, b + 1.0)
    shape2 = np.where(first, b, a)
    out = _beta_draw(gen, shape1, shape2, size)
    return float(out) if size is None else out


def tilde_lambda_components(p: BetaParams) -> list[tuple[float, float, float]]:
    """``(weight, a, b)`` for each Beta component of the mixture."""
    p = _check(p)
    a, b = p.alpha, p.beta
    return [(a / (a + b), a + 1.0, b), (b / (a + b), b + 1.0, a)]


def tilde_lambda_moment(p: BetaParams, k: int) -> float:
    """Exact E[(1 - lam)^k] under the mixture, k in {1, 2}."""
    if k not in (1, 2):
        raise UnsupportedMomentError(f"moment order must be 1 or 2, got {k}")
    total = 0.0
    for w, a, b in tilde_lambda_components(p):
        # 1 - lam ~ Beta(b, a)
        if k == 1:
            m = b / (a + b)
        else:
            m = b * (b + 1.0) / ((a + b) * (a + b + 1.0))
        total += w * m
    return total


def tilde_lambda_pdf(p: BetaParams, x):
    from scipy import stats

    return sum(w * stats.beta.pdf(x, a, b) for w, a, b in tilde_lambda_components(p))


def std_normal_vector(rng: RngStream, d: int, size=None) -> np.ndarray:
    if int(d) < 1:
        raise ParameterError(f"dimension must be >= 1, got {d}")
    shape = (int(d),) if size is None else (size, int(d))
    return rng.generator.standard_normal(shape)


def uniform_int(rng: RngStream, high: int, size=None):
    """Uniform integers on {0, ..., high-1}."""
    if int(high) < 1:
        raise ParameterError("high must be >= 1")
    return rng.generator.integers(0, int(high), size=size)


def chunk_counts(total: int, chunk: int = MC_CHUNK) -> list[int]:
    if total < 1:
        raise ParameterError("sample count must be >= 1")
    full, rest = divmod(total, chunk)
    return [chunk] * full + ([rest] if rest else [])


def run_chunked(
    rng: RngStream,
    total: int,
    work: Callable[[RngStream, int], T],
    threads: int = 1,
    chunk: int = MC_CHUNK,
) -> list[T]:
    """Run ``work(substream, count)`` over fixed-size chunks.

    Chunk ``c`` always draws from ``rng.spawn(c)`` and results come back in
    chunk order, so any reduction over them is independent of ``threads``.
    """
    counts = chunk_counts(total, chunk)
    streams = [rng.spawn(c) for c in range(len(counts))]
    if threads <= 1 or len(counts) == 1:
        return [work(s, n) for s, n in zip(streams, counts)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(work, streams, counts))


def ordered_sum(parts: Sequence[np.ndarray]) -> np.ndarray:
    """Left-to-right sum of partial results; the order is fixed by chunk index."""
    total = np.array(parts[0], dtype=float, copy=True)
    for part in parts[1:]:
        total += part
    return total
