"""Command-line front end.

Exit codes: 0 on success, 1 on usage errors (bad flags, unreadable input),
2 when a library routine raises a numerical or precondition error.
"""
from __future__ import annotations

import argparse
import sys

import numpy as np

from . import io
from .coefficients import coeff_closed, coeff_matrix_closed, coeff_monte_carlo, offset_heatmap
from .errors import MSDAError
from .experiments import offset_range, partial_grad_map, random_image_dataset, run_two_moons
from .masks import METHODS, GridShape, MaskSpec, sample_mask
from .mixer import Sample, mix_extrapolate, mix_pair
from .models import TwoLayerNet
from .stochastics import BetaParams, RngStream
from .synthesis import TargetSpec, synthesize_mask_sampler, verify_synthesis


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: error: {message}")


def _need_seed(args):
    if args.seed is None:
        raise UsageError(f"{args.command}: --seed is required for random output")
    return args.seed


def _spec(args, n: int) -> MaskSpec:
    return MaskSpec(args.method, BetaParams(args.alpha, args.beta), GridShape.square(n), r=args.r, q=args.q)


def _config(args) -> dict:
    return {k: v for k, v in sorted(vars(args).items()) if k != "func"}


def cmd_gen_mask(args):
    seed = _need_seed(args)
    mask = sample_mask(RngStream(seed), _spec(args, args.n), lam=args.lam)
    io.write_pgm(args.out, mask.grid(), ascii=args.ascii)
    if args.csv:
        io.write_csv_matrix(args.csv, mask.grid())


def _load_image(path):
    try:
        return io.read_pgm(path).astype(float) / 255.0
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc.strerror}") from None


def cmd_mix(args):
    a, b = _load_image(args.a), _load_image(args.b)
    if a.shape != b.shape or a.shape[0] != a.shape[1]:
        raise UsageError(f"images must be square and equal in size, got {a.shape} and {b.shape}")
    sa, sb = Sample(a.ravel(), [1.0, 0.0]), Sample(b.ravel(), [0.0, 1.0])
    if args.extrapolate:
        if args.lam is None:
            raise UsageError("mix: --extrapolate needs --lambda")
        out = mix_extrapolate(sa, sb, args.lam)
    else:
        seed = _need_seed(args)
        mask = sample_mask(RngStream(seed), _spec(args, a.shape[0]), lam=args.lam)
        out = mix_pair(sa, sb, mask)
    io.write_pgm(args.out, out.x.reshape(a.shape), ascii=args.ascii)


def _mc_rng(args):
    if args.samples is None or args.samples < 1:
        raise UsageError(f"{args.command}: --mode mc needs --samples >= 1")
    return RngStream(_need_seed(args))


def cmd_coeff(args):
    spec = _spec(args, args.n)
    n = args.n
    if args.pairs == "full":
        if args.mode == "closed":
            res = coeff_matrix_closed(spec, args.lam)
        else:
            res = coeff_monte_carlo(_mc_rng(args), spec, args.lam, args.samples, "full", args.threads)
        io.write_csv_matrix(args.out, res.entries)
        if args.se and res.se is not None:
            io.write_csv_matrix(args.se, res.se)
        return
    # coefficients between the grid's centre pixel and every pixel, as an n x n grid
    ref = (n // 2) * n + n // 2
    pairs = [(ref, k) for k in range(n * n)]
    if args.mode == "closed":
        values = np.asarray(coeff_closed(spec, args.lam, np.full(n * n, ref), np.arange(n * n)))
        se = None
    else:
        res = coeff_monte_carlo(_mc_rng(args), spec, args.lam, args.samples, pairs, args.threads)
        values, se = res.entries, res.se
    io.write_csv_matrix(args.out, values.reshape(n, n))
    if args.se and se is not None:
        io.write_csv_matrix(args.se, se.reshape(n, n))


def cmd_heatmap(args):
    spec = _spec(args, args.n)
    if args.mode == "closed":
        hm = offset_heatmap(spec, args.lam)
    else:
        hm = offset_heatmap(spec, args.lam, "mc", _mc_rng(args), args.samples, args.threads)
    io.write_csv_rows(args.out, ["dx", "dy", "value"], hm.rows())


def cmd_synth_mask(args):
    seed = _need_seed(args)
    try:
        A = io.read_csv_matrix(args.target)
    except OSError as exc:
        raise UsageError(f"cannot read {args.target}: {exc.strerror}") from None
    target = TargetSpec(args.lam, A)
    sampler = synthesize_mask_sampler(target, args.tol)
    report = verify_synthesis(sampler, target, RngStream(seed), args.samples, args.threads)
    report["config"] = _config(args)
    io.write_json(args.report, report)


def cmd_two_moons(args):
    report = run_two_moons(
        args.engine,
        args.method,
        alpha=args.alpha,
        beta=args.beta,
        m=args.m,
        noise=args.noise,
        epochs=args.epochs,
        lr=args.lr,
        seed=_need_seed(args),
        batch=args.batch,
        heldout_m=args.heldout_m,
        gap_draws=args.gap_draws,
    )
    out = report.to_json()
    out["config"] = {**out["config"], "cli": _config(args)}
    io.write_json(args.report, out)
    if args.curve:
        io.write_csv_rows(args.curve, ["epoch", "loss"], enumerate(report.train_loss_curve, start=1))


def _offsets(text: str):
    try:
        if ":" in text:
            lo, hi = (int(v) for v in text.split(":"))
            return [(dx, dy) for dy in range(lo, hi + 1) for dx in range(lo, hi + 1)]
        return offset_range(int(text))
    except ValueError:
        raise UsageError(f"--offsets expects K or LO:HI, got {text!r}") from None


def cmd_partialgrad(args):
    seed = _need_seed(args)
    offsets = _offsets(args.offsets)
    net = TwoLayerNet.random(RngStream(seed, 0), args.n * args.n, args.hidden)
    data = random_image_dataset(RngStream(seed, 1), args.n, args.images)
    pg = partial_grad_map(net, data, offsets, aggregate=args.aggregate)
    io.write_csv_rows(args.out, ["dx", "dy", "value"], pg.rows())


def _mask_flags(p, methods=METHODS):
    p.add_argument("--method", required=True, choices=methods)
    p.add_argument("--alpha", type=float, default=1.0)
    p.add_argument("--beta", type=float, default=1.0)
    p.add_argument("--r", type=float, default=0.5, help="hmix box shrink ratio")
    p.add_argument("--q", type=float, default=0.5, help="stochastic mixup probability")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="msdalab", description="Mixed-sample data augmentation lab.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-mask", help="sample one mask and write it as PGM (and CSV)")
    _mask_flags(p)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--lambda", dest="lam", type=float, default=None)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.add_argument("--csv")
    p.add_argument("--ascii", action="store_true", help="write P2 instead of P5")
    p.set_defaults(func=cmd_gen_mask)

    p = sub.add_parser("mix", help="mix two square PGM images")
    _mask_flags(p)
    p.add_argument("--a", required=True)
    p.add_argument("--b", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--lambda", dest="lam", type=float, default=None)
    p.add_argument("--extrapolate", action="store_true", help="constant mask, lambda may leave [0, 1]")
    p.add_argument("--seed", type=int)
    p.add_argument("--ascii", action="store_true")
    p.set_defaults(func=cmd_mix)

    for name, func in (("coeff", cmd_coeff), ("heatmap", cmd_heatmap)):
        p = sub.add_parser(name, help="coefficient matrix" if name == "coeff" else "offset heatmap as dx,dy,value")
        _mask_flags(p)
        p.add_argument("--lambda", dest="lam", type=float, required=True)
        p.add_argument("--n", type=int, required=True)
        p.add_argument("--mode", choices=("closed", "mc"), default="closed")
        p.add_argument("--samples", type=int)
        p.add_argument("--seed", type=int)
        p.add_argument("--threads", type=int, default=1)
        p.add_argument("--out", required=True)
        if name == "coeff":
            p.add_argument("--pairs", choices=("full", "offsets"), default="full")
            p.add_argument("--se", help="also write Monte-Carlo standard errors here")
        p.set_defaults(func=func)

    p = sub.add_parser("synth-mask", help="build a sampler for a target coefficient matrix and verify it")
    p.add_argument("--target", required=True)
    p.add_argument("--lambda", dest="lam", type=float, required=True)
    p.add_argument("--samples", type=int, required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--tol", type=float, default=None)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--report", required=True)
    p.set_defaults(func=cmd_synth_mask)

    p = sub.add_parser("two-moons", help="train logistic regression on two-moons")
    p.add_argument("--engine", choices=("original", "approximate"), required=True)
    p.add_argument("--method", choices=("mixup", "bernoulli"), required=True)
    p.add_argument("--alpha", type=float, default=1.0)
    p.add_argument("--beta", type=float, default=1.0)
    p.add_argument("--m", type=int, default=200)
    p.add_argument("--noise", type=float, default=0.2)
    p.add_argument("--epochs", type=int, default=2000)
    p.add_argument("--lr", type=float, default=0.1)
    p.add_argument("--batch", type=int, default=0, help="0 = full batch")
    p.add_argument("--heldout-m", type=int, default=1000)
    p.add_argument("--gap-draws", type=int, default=100_000)
    p.add_argument("--seed", type=int)
    p.add_argument("--report", required=True)
    p.add_argument("--curve", help="also write the loss curve as CSV")
    p.set_defaults(func=cmd_two_moons)

    p = sub.add_parser("partialgrad", help="partial-gradient-product map of a random ReLU net")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--hidden", type=int, required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--offsets", required=True, help="K for |dx|,|dy| <= K, or LO:HI")
    p.add_argument("--images", type=int, default=64)
    p.add_argument("--aggregate", choices=("max", "mean"), default="max")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_partialgrad)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if getattr(args, "threads", 1) < 1:
            raise UsageError("--threads must be >= 1")
        args.func(args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except MSDAError as exc:
        print(f"msdalab: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
