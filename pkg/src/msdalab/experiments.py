"""Desk-scale experiments: two-moons training under both loss engines and
partial-gradient-product maps on a small ReLU network.

Seed layout for :func:`run_two_moons`: stream 0 draws the training set,
stream 1 the held-out set, stream 2 drives the trainer and stream 3 the
final Monte-Carlo loss comparison.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .coefficients import expected_coeff_matrix
from .errors import (
    DegenerateInputError,
    DivergenceError,
    OffsetError,
    ParameterError,
    PreconditionError,
    ShapeError,
)
from .losses import Dataset, approx_loss, center_dataset, glm_approx_terms, msda_empirical_loss
from .masks import GridShape, MaskSpec, sample_masks
from .mixer import mix_arrays
from .models import LOGISTIC, GlmModel, LossFamily, TwoLayerNet, point_loss
from .stochastics import BetaParams, RngStream, tilde_lambda_moment

ENGINES = ("original", "approximate")
DIVERGENCE_LIMIT = 1e6


def two_moons(n: int, noise: float, rng: RngStream) -> Dataset:
    """Two interleaving half-circles of radius 1, ``n / 2`` points each.

    Class 0 sits on the upper half-circle ``(cos t, sin t)``; class 1 on the
    lower half-circle ``(1 - cos t, 0.5 - sin t)``, with ``t`` evenly spaced
    on ``[0, pi]``.  Gaussian noise of scale ``noise`` is added to both
    coordinates and the rows are shuffled.
    """
    if n < 2 or n % 2:
        raise ParameterError(f"two_moons needs a positive even n, got {n}")
    if noise < 0:
        raise ParameterError(f"noise must be >= 0, got {noise}")
    half = n // 2
    t = np.linspace(0.0, np.pi, half)
    upper = np.stack([np.cos(t), np.sin(t)], axis=1)
    lower = np.stack([1.0 - np.cos(t), 0.5 - np.sin(t)], axis=1)
    X = np.vstack([upper, lower])
    y = np.concatenate([np.zeros(half), np.ones(half)])
    gen = rng.generator
    if noise > 0:
        X = X + noise * gen.standard_normal(X.shape)
    order = gen.permutation(n)
    return Dataset(X[order], y[order], GridShape.flat(2))


@dataclass(frozen=True)
class TrainConfig:
    """SGD settings.  ``batch = 0`` means full batch; ``spec = None`` trains
    on the plain empirical risk (no mixing) under either engine."""

    epochs: int
    learning_rate: float
    batch: int = 0
    loss_engine: str = "original"
    spec: MaskSpec | None = None
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ParameterError(f"epochs must be >= 1, got {self.epochs}")
        if not self.learning_rate > 0:
            raise ParameterError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.batch < 0:
            raise ParameterError(f"batch must be >= 0, got {self.batch}")
        if self.loss_engine not in ENGINES:
            raise ParameterError(f"loss_engine must be one of {ENGINES}, got {self.loss_engine!r}")

    def to_json(self) -> dict:
        out = {k: v for k, v in asdict(self).items() if k != "spec"}
        out["spec"] = spec_to_json(self.spec)
        return out


def spec_to_json(spec: MaskSpec | None):
    if spec is None:
        return None
    return {
        "method": spec.method,
        "alpha": spec.beta.alpha,
        "beta": spec.beta.beta,
        "grid": spec.shape.kind,
        "size": spec.shape.size,
        "r": spec.r,
        "q": spec.q,
    }


@dataclass
class ExperimentReport:
    engine: str
    final_theta: list
    final_bias: float
    train_loss_curve: list
    heldout_accuracy: float | None
    original_loss: float | None = None
    original_loss_se: float | None = None
    approximate_loss: float | None = None
    loss_gap: float | None = None
    loss_gap_relative: float | None = None
    angle_deg: float | None = None
    config: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.heldout_accuracy is not None and not 0.0 <= self.heldout_accuracy <= 1.0:
            raise ParameterError(f"accuracy {self.heldout_accuracy} outside [0, 1]")

    def to_json(self) -> dict:
        return asdict(self)


def accuracy(model: GlmModel, d: Dataset) -> float:
    pred = model.predict(d.X) > 0.0
    return float(np.mean(pred == (d.y > 0.5)))


def weight_angle(a, b) -> float:
    """Angle in degrees between two weight vectors."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise DegenerateInputError("angle undefined for a zero weight vector")
    # Kahan's form stays accurate near 0 and 180 degrees, unlike arccos
    u, v = a * nb, b * na
    return float(np.degrees(2.0 * np.arctan2(np.linalg.norm(u - v), np.linalg.norm(u + v))))


def _mixed_batch_step(theta, bias, family: LossFamily, X, y, rng, spec, idx, partner):
    if spec is None:
        xb, yb = X[idx], y[idx]
    else:
        masks = sample_masks(rng, spec, idx.size)
        xb, yb = mix_arrays(X[idx], X[partner], y[idx], y[partner], masks.values, masks.lams)
    f = xb @ theta + bias
    r = family.dh(f) - yb
    grad = np.append(xb.T @ r, r.sum()) / idx.size
    return float(np.mean(point_loss(family, f, yb))), grad


def train_sgd(
    d: Dataset,
    cfg: TrainConfig,
    heldout: Dataset | None = None,
    init=None,
    family: LossFamily = LOGISTIC,
    gap_draws: int = 0,
    gap_rng: RngStream | None = None,
) -> ExperimentReport:
    """Logistic regression by SGD on the original or the approximate MSDA loss.

    The original engine pairs every sample with a partner from a fresh
    permutation each epoch and draws a new (lam, M) per pair.  The
    approximate engine descends the analytic gradient of L_m + R1 + R2 on
    each batch, with the input second moment of the whole dataset.
    ``gap_draws > 0`` adds the Monte-Carlo original loss at the final
    weights and its gap to the approximate loss.
    """
    spec = cfg.spec
    if spec is not None and spec.shape.n_coords != d.d:
        raise ShapeError(f"mask has {spec.shape.n_coords} coordinates, data has {d.d}")
    approximate = cfg.loss_engine == "approximate"
    if approximate and not d.centered:
        raise PreconditionError("the approximate engine needs centred inputs; call center_dataset")
    params = np.zeros(d.d + 1) if init is None else np.array(init, dtype=float).ravel()
    if params.size != d.d + 1:
        raise ShapeError(f"init has {params.size} entries, expected {d.d + 1}")

    rng = RngStream(cfg.seed, 2)
    gen = rng.generator
    batch = d.m if cfg.batch == 0 else min(cfg.batch, d.m)
    if approximate and spec is not None:
        abar = expected_coeff_matrix(spec)
        e1 = tilde_lambda_moment(spec.beta, 1)
    else:
        abar = np.zeros((d.d, d.d))
        e1 = 0.0
    sigma = d.second_moment

    curve = []
    step = 0
    for _ in range(cfg.epochs):
        order = gen.permutation(d.m)
        partner = gen.permutation(d.m)
        total = 0.0
        for start in range(0, d.m, batch):
            idx = order[start : start + batch]
            if approximate:
                loss, grad = glm_approx_terms(
                    params[:-1], params[-1], family, d.X[idx], d.y[idx], sigma, abar, e1
                )
            else:
                loss, grad = _mixed_batch_step(
                    params[:-1], params[-1], family, d.X, d.y, rng, spec, idx, partner[start : start + batch]
                )
            if not np.isfinite(loss) or loss > DIVERGENCE_LIMIT or not np.all(np.isfinite(grad)):
                raise DivergenceError(step, loss)
            params = params - cfg.learning_rate * grad
            total += loss * idx.size
            step += 1
        curve.append(total / d.m)

    model = GlmModel(params[:-1], params[-1])
    report = ExperimentReport(
        engine=cfg.loss_engine,
        final_theta=model.theta.tolist(),
        final_bias=model.bias,
        train_loss_curve=curve,
        heldout_accuracy=None if heldout is None else accuracy(model, heldout),
        config=cfg.to_json(),
    )
    if gap_draws > 0 and spec is not None:
        fill_loss_gap(report, model, family, d, spec, gap_draws, gap_rng or RngStream(cfg.seed, 3))
    return report


def fill_loss_gap(report: ExperimentReport, model, family, d: Dataset, spec: MaskSpec, draws: int, rng: RngStream):
    orig = msda_empirical_loss(rng, model, family, d, spec, draws)
    approx = approx_loss(model, family, d, spec).total
    report.original_loss = orig.value
    report.original_loss_se = orig.se
    report.approximate_loss = approx
    report.loss_gap = abs(orig.value - approx)
    report.loss_gap_relative = report.loss_gap / abs(approx)


def moons_data(m: int, noise: float, seed: int, heldout_m: int = 1000):
    """Centred training set and a held-out set shifted by the training mean."""
    raw = two_moons(m, noise, RngStream(seed, 0))
    train = center_dataset(raw)
    held = two_moons(heldout_m, noise, RngStream(seed, 1))
    held = Dataset(held.X - raw.mean, held.y, held.shape)
    return train, held


def run_two_moons(
    engine: str,
    method: str,
    alpha: float = 1.0,
    beta: float = 1.0,
    m: int = 200,
    noise: float = 0.2,
    epochs: int = 2000,
    lr: float = 0.1,
    seed: int = 7,
    batch: int = 0,
    heldout_m: int = 1000,
    gap_draws: int = 100_000,
) -> ExperimentReport:
    """One trained engine on two-moons; the CLI ``two-moons`` subcommand."""
    train, held = moons_data(m, noise, seed, heldout_m)
    spec = MaskSpec(method, BetaParams(alpha, beta), GridShape.flat(2))
    cfg = TrainConfig(epochs, lr, batch, engine, spec, seed)
    report = train_sgd(train, cfg, held, gap_draws=gap_draws)
    report.config.update(m=m, noise=noise, heldout_m=heldout_m, gap_draws=gap_draws)
    return report


def compare_engines(**kwargs) -> dict:
    """Train both engines on the same data; fills each report's angle."""
    reports = {e: run_two_moons(e, **kwargs) for e in ENGINES}
    angle = weight_angle(reports["original"].final_theta, reports["approximate"].final_theta)
    for r in reports.values():
        r.angle_deg = angle
    return reports


@dataclass(frozen=True)
class PartialGradMap:
    offsets: list
    values: np.ndarray

    def as_dict(self) -> dict:
        return {tuple(o): float(v) for o, v in zip(self.offsets, self.values)}

    def rows(self):
        return [(dx, dy, float(v)) for (dx, dy), v in zip(self.offsets, self.values)]


def offset_range(k: int) -> list:
    """All offsets ``(dx, dy)`` with ``|dx|, |dy| <= k``, dy-major."""
    return [(dx, dy) for dy in range(-k, k + 1) for dx in range(-k, k + 1)]


def partial_grad_map(net: TwoLayerNet, d: Dataset, offsets, aggregate: str = "max") -> PartialGradMap:
    """max_v |d_v f(x) d_{v+p} f(x)| per image, aggregated over images and
    normalised so the map sums to 1.

    ``dx`` shifts columns and ``dy`` rows.  ``aggregate="mean"`` averages
    over images instead of taking the maximum.
    """
    if d.shape is None or d.shape.kind != "square":
        raise ShapeError("partial_grad_map needs square-grid inputs")
    if aggregate not in ("max", "mean"):
        raise ParameterError(f"aggregate must be 'max' or 'mean', got {aggregate!r}")
    n = d.shape.n
    G = net.input_grad(d.X).reshape(d.m, n, n)
    offsets = [(int(dx), int(dy)) for dx, dy in offsets]
    raw = np.empty(len(offsets))
    for t, (dx, dy) in enumerate(offsets):
        if abs(dx) >= n or abs(dy) >= n:
            raise OffsetError(f"offset ({dx}, {dy}) leaves no valid base pixel on a {n}x{n} grid")
        rows = slice(max(0, -dy), n - max(0, dy))
        cols = slice(max(0, -dx), n - max(0, dx))
        shifted_rows = slice(rows.start + dy, rows.stop + dy)
        shifted_cols = slice(cols.start + dx, cols.stop + dx)
        prod = np.abs(G[:, rows, cols] * G[:, shifted_rows, shifted_cols])
        per_image = prod.reshape(d.m, -1).max(axis=1)
        raw[t] = per_image.max() if aggregate == "max" else per_image.mean()
    total = raw.sum()
    if not total > 0:
        raise DegenerateInputError("every partial-gradient product vanishes; the map cannot be normalised")
    return PartialGradMap(offsets, raw / total)


def random_image_dataset(rng: RngStream, n: int, count: int) -> Dataset:
    """Standard-normal n x n images with placeholder labels."""
    X = rng.generator.standard_normal((count, n * n))
    return Dataset(X, np.zeros(count), GridShape.square(n))
