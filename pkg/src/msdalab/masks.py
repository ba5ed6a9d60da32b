"""Mixing masks for the supported MSDA families.

Coordinates of a square grid are stored row-major in 0-based flat
positions.  Where a pixel is written as a pair ``(row, col)`` it is 1-based,
so position ``(row - 1) * n + (col - 1)``.

Box families (cutmix, hmix) place an ``s x s`` zero box whose 0-based
top-left offset is uniform on ``{0, ..., n - s - 1}`` per axis.  The last
row and column are therefore never covered unless ``s == n``; this is what
makes the closed-form coefficients in :mod:`msdalab.coefficients` exact.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .errors import ParameterError, SpecError
from .stochastics import BetaParams, RngStream, beta_sample

METHODS = ("mixup", "cutmix", "hmix", "gmix", "stochastic", "bernoulli")
SQUARE_ONLY = ("cutmix", "hmix", "gmix", "stochastic")

# guards floor() against sqrt round-off when sqrt(1 - lam) * n is an integer
_FLOOR_EPS = 1e-9


@dataclass(frozen=True)
class GridShape:
    kind: str
    size: int

    def __post_init__(self):
        if self.kind == "flat":
            if self.size < 1:
                raise SpecError("flat shape needs d >= 1")
        elif self.kind == "square":
            if self.size < 2:
                raise SpecError("square shape needs n >= 2")
        else:
            raise SpecError(f"unknown grid kind {self.kind!r}")

    @classmethod
    def flat(cls, d: int) -> "GridShape":
        return cls("flat", int(d))

    @classmethod
    def square(cls, n: int) -> "GridShape":
        return cls("square", int(n))

    @property
    def n_coords(self) -> int:
        return self.size if self.kind == "flat" else self.size * self.size

    @property
    def n(self) -> int:
        if self.kind != "square":
            raise SpecError("flat shapes have no side length")
        return self.size


def pixel_position(row: int, col: int, n: int) -> int:
    """0-based flat position of the 1-based pixel ``(row, col)``."""
    if not (1 <= row <= n and 1 <= col <= n):
        raise ParameterError(f"pixel ({row}, {col}) outside a {n}x{n} grid")
    return (row - 1) * n + (col - 1)


@dataclass(frozen=True)
class MaskSpec:
    method: str
    beta: BetaParams
    shape: GridShape
    r: float = 0.5
    q: float = 0.5

    def __post_init__(self):
        if self.method not in METHODS:
            raise SpecError(f"unknown method {self.method!r}; expected one of {METHODS}")
        if not isinstance(self.beta, BetaParams):
            object.__setattr__(self, "beta", BetaParams(*self.beta))
        if not 0.0 <= self.r <= 1.0:
            raise SpecError(f"r must lie in [0, 1], got {self.r}")
        if not 0.0 <= self.q <= 1.0:
            raise SpecError(f"q must lie in [0, 1], got {self.q}")
        if self.method in SQUARE_ONLY and self.shape.kind != "square":
            raise SpecError(f"{self.method} needs a square grid")


@dataclass(frozen=True)
class Mask:
    values: np.ndarray
    lam: float
    shape: GridShape
    method: str
    aux: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def grid(self) -> np.ndarray:
        n = self.shape.n
        return self.values.reshape(n, n)


def cutmix_side(lam, n: int):
    lam = np.asarray(lam, dtype=float)
    s = np.floor(np.sqrt(np.clip(1.0 - lam, 0.0, 1.0)) * n + _FLOOR_EPS)
    return np.clip(s, 0, n).astype(int)


def hmix_side(lam, r: float, n: int):
    lam = np.asarray(lam, dtype=float)
    s = np.floor(np.sqrt(np.clip(1.0 - lam, 0.0, 1.0) * r) * n + _FLOOR_EPS)
    return np.clip(s, 0, n).astype(int)


def hmix_fill(lam, r: float):
    """Out-of-box value lam / (1 - (1 - lam) r); 1 at the 0/0 corner lam=0, r=1."""
    lam = np.asarray(lam, dtype=float)
    denom = 1.0 - (1.0 - lam) * r
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(denom > 0, lam / np.where(denom > 0, denom, 1.0), 1.0)


def _box_values(n, s, off_r, off_c, outside):
    idx = np.arange(n)
    in_r = (idx[None, :] >= off_r[:, None]) & (idx[None, :] < (off_r + s)[:, None])
    in_c = (idx[None, :] >= off_c[:, None]) & (idx[None, :] < (off_c + s)[:, None])
    inbox = in_r[:, :, None] & in_c[:, None, :]
    vals = np.where(inbox, 0.0, np.asarray(outside, dtype=float)[:, None, None])
    return vals.reshape(len(s), n * n)


def _gmix_values(n, lams, centers):
    rows, cols = np.divmod(np.arange(n * n), n)
    pr, pc = np.divmod(centers, n)
    d2 = (rows[None, :] - pr[:, None]) ** 2 + (cols[None, :] - pc[:, None]) ** 2
    spread = 2.0 * (1.0 - lams) * n * n
    with np.errstate(divide="ignore", invalid="ignore"):
        vals = 1.0 - np.exp(-d2 * np.pi / np.where(spread > 0, spread, 1.0)[:, None])
    # lam = 1 collapses the hole; the limit is the all-ones mask
    return np.where((spread > 0)[:, None], vals, 1.0)


def _box_offsets(gen, n, s):
    high = np.maximum(n - s, 1)
    return gen.integers(0, high), gen.integers(0, high)


@dataclass
class MaskBatch:
    """``count`` masks stacked row-wise, with their ratios and witnesses."""

    values: np.ndarray
    lams: np.ndarray
    witness: dict[str, np.ndarray]


def sample_masks(rng: RngStream, spec: MaskSpec, count: int, lam: float | None = None) -> MaskBatch:
    """Vectorised mask sampler.

    Draws ``lam ~ Beta(alpha, beta)`` per mask unless ``lam`` is given, then
    the method's witness (box offset, centre, branch or coin flips).
    """
    gen = rng.generator
    if lam is None:
        lams = beta_sample(rng, spec.beta, size=count)
    else:
        if not 0.0 <= lam <= 1.0:
            raise ParameterError(f"lam must lie in [0, 1], got {lam}")
        lams = np.full(count, float(lam))
    d = spec.shape.n_coords
    m = spec.method
    witness: dict[str, np.ndarray] = {}

    if m == "mixup":
        values = np.repeat(lams[:, None], d, axis=1)
    elif m == "bernoulli":
        coins = gen.random((count, d)) < lams[:, None]
        witness["coins"] = coins
        values = coins.astype(float)
    elif m in ("cutmix", "hmix", "stochastic"):
        n = spec.shape.n
        if m == "hmix":
            s = hmix_side(lams, spec.r, n)
            outside = hmix_fill(lams, spec.r)
        else:
            s = cutmix_side(lams, n)
            outside = np.ones(count)
        off_r, off_c = _box_offsets(gen, n, s)
        witness.update(side=s, offset=np.stack([off_r, off_c], axis=1))
        values = _box_values(n, s, off_r, off_c, outside)
        if m == "stochastic":
            use_mixup = gen.random(count) < spec.q
            witness["mixup"] = use_mixup
            values = np.where(use_mixup[:, None], lams[:, None], values)
    else:  # gmix
        n = spec.shape.n
        centers = gen.integers(0, n * n, size=count)
        witness["center"] = np.stack(np.divmod(centers, n), axis=1)
        values = _gmix_values(n, lams, centers)
    return MaskBatch(values=values, lams=lams, witness=witness)


def _batch_item(spec: MaskSpec, batch: MaskBatch, i: int = 0) -> Mask:
    aux: dict[str, Any] = {}
    w = batch.witness
    if "offset" in w:
        aux["offset"] = (int(w["offset"][i, 0]), int(w["offset"][i, 1]))
        aux["side"] = int(w["side"][i])
    if "mixup" in w:
        aux["branch"] = "mixup" if bool(w["mixup"][i]) else "cutmix"
    if "center" in w:
        aux["center"] = (int(w["center"][i, 0]), int(w["center"][i, 1]))
    if "coins" in w:
        aux["coins"] = w["coins"][i].copy()
    return Mask(batch.values[i], float(batch.lams[i]), spec.shape, spec.method, aux)


def sample_mask(rng: RngStream, spec: MaskSpec, lam: float | None = None) -> Mask:
    """Draw a single mask; ``lam`` fixes the ratio instead of sampling it."""
    return _batch_item(spec, sample_masks(rng, spec, 1, lam=lam))


def mask_with_witness(method: str, lam: float, shape: GridShape, witness=None, *, r: float = 0.5) -> Mask:
    """The mask the sampler produces for ratio ``lam`` and a given witness.

    Witness per method: cutmix / hmix take the 0-based box offset
    ``(row, col)``; gmix the 0-based centre pixel ``(row, col)``; stochastic
    a pair ``(branch, offset)`` with branch ``"mixup"`` or ``"cutmix"``;
    bernoulli a 0/1 vector.  Mixup ignores the witness.
    """
    MaskSpec(method, BetaParams(1.0, 1.0), shape, r=r)  # method/shape check
    if not 0.0 <= lam <= 1.0:
        raise ParameterError(f"lam must lie in [0, 1], got {lam}")
    d = shape.n_coords
    lams = np.array([float(lam)])
    aux: dict[str, Any] = {}

    if method == "mixup":
        return Mask(np.full(d, float(lam)), float(lam), shape, method)
    if method == "bernoulli":
        coins = np.asarray(witness)
        if coins.shape != (d,) or not np.isin(coins, (0, 1)).all():
            raise ParameterError("bernoulli witness must be a 0/1 vector over the coordinates")
        return Mask(coins.astype(float), float(lam), shape, method, {"coins": coins.astype(bool)})

    n = shape.n
    if method == "stochastic":
        branch, offset = witness
        if branch == "mixup":
            return Mask(np.full(d, float(lam)), float(lam), shape, method, {"branch": "mixup"})
        if branch != "cutmix":
            raise ParameterError(f"stochastic branch must be 'mixup' or 'cutmix', got {branch!r}")
        inner = mask_with_witness("cutmix", lam, shape, offset)
        return Mask(inner.values, float(lam), shape, method, {**inner.aux, "branch": "cutmix"})
    if method in ("cutmix", "hmix"):
        if method == "cutmix":
            s = int(cutmix_side(lam, n))
            outside = np.ones(1)
        else:
            s = int(hmix_side(lam, r, n))
            outside = np.atleast_1d(hmix_fill(lam, r))
        off_r, off_c = (0, 0) if witness is None and s in (0, n) else tuple(int(v) for v in witness)
        top = max(n - s - 1, 0)
        if not (0 <= off_r <= top and 0 <= off_c <= top):
            raise ParameterError(f"box offset ({off_r}, {off_c}) outside {{0..{top}}}^2 for side {s}")
        values = _box_values(n, np.array([s]), np.array([off_r]), np.array([off_c]), outside)[0]
        aux = {"offset": (off_r, off_c), "side": s}
        return Mask(values, float(lam), shape, method, aux)
    if method == "gmix":
        pr, pc = (int(v) for v in witness)
        if not (0 <= pr < n and 0 <= pc < n):
            raise ParameterError(f"centre ({pr}, {pc}) outside the {n}x{n} grid")
        values = _gmix_values(n, lams, np.array([pr * n + pc]))[0]
        return Mask(values, float(lam), shape, method, {"center": (pr, pc)})
    raise SpecError(f"unknown method {method!r}")
