"""Combine two samples through a mask (inputs) and a ratio (labels)."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ParameterError, ShapeError
from .masks import Mask


@dataclass(frozen=True)
class Sample:
    """An input vector and a soft label (probability vector over classes)."""

    x: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "x", np.asarray(self.x, dtype=float).ravel())
        object.__setattr__(self, "y", np.atleast_1d(np.asarray(self.y, dtype=float)))


def _check_pair(a: Sample, b: Sample):
    if a.x.shape != b.x.shape:
        raise ShapeError(f"input lengths differ: {a.x.size} vs {b.x.size}")
    if a.y.shape != b.y.shape:
        raise ShapeError(f"label dimensions differ: {a.y.size} vs {b.y.size}")


def mix_pair(a: Sample, b: Sample, mask: Mask) -> Sample:
    """``M * a.x + (1 - M) * b.x`` with label ``lam * a.y + (1 - lam) * b.y``."""
    _check_pair(a, b)
    m = mask.values
    if m.shape != a.x.shape:
        raise ShapeError(f"mask has {m.size} coordinates, inputs have {a.x.size}")
    lam = mask.lam
    return Sample(m * a.x + (1.0 - m) * b.x, lam * a.y + (1.0 - lam) * b.y)


def mix_extrapolate(a: Sample, b: Sample, lam: float, limit: float = 2.0) -> Sample:
    """Constant-mask combination that allows ``lam`` outside [0, 1].

    Values are not clipped here; clipping belongs to image output.
    """
    _check_pair(a, b)
    if abs(lam) > limit:
        raise ParameterError(f"|lam| = {abs(lam)} exceeds the configured limit {limit}")
    return Sample(lam * a.x + (1.0 - lam) * b.x, lam * a.y + (1.0 - lam) * b.y)


def mix_arrays(xa: np.ndarray, xb: np.ndarray, ya, yb, masks: np.ndarray, lams: np.ndarray):
    """Batched :func:`mix_pair` over rows; labels may be scalars per row."""
    xa, xb, masks = np.asarray(xa), np.asarray(xb), np.asarray(masks)
    if not (xa.shape == xb.shape == masks.shape):
        raise ShapeError(f"shape mismatch: {xa.shape}, {xb.shape}, {masks.shape}")
    ya, yb = np.asarray(ya, dtype=float), np.asarray(yb, dtype=float)
    lam = lams.reshape((-1,) + (1,) * (ya.ndim - 1))
    return masks * xa + (1.0 - masks) * xb, lam * ya + (1.0 - lam) * yb
