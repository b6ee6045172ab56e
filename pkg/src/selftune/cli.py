"""Command-line front end.

Exit codes: 0 success, 1 I/O error (or failed benchmark rows), 2 usage or
scheme/data mismatch, 3 gradient check failed.
"""
from __future__ import annotations

import argparse
import csv
import functools
import logging
import sys
from pathlib import Path

import numpy as np

from . import benchmark as bench
from .dequip import FIELD_NAMES, DequipDenoiser, Theta
from .grad import grad_check
from .imaging import ImageFormatError, load_image, psnr, save_image
from .noise import NoiseModel
from .oracles import ScalarShrink
from .tuning import (
    SCHEMES,
    SchemeCost,
    SchemeUnavailable,
    TuneConfig,
    TuneInputs,
    TuneScheme,
    select_scheme,
    tune,
)

log = logging.getLogger("selftune")

EXIT_IO = 1
EXIT_USAGE = 2
EXIT_CHECK = 3

REPORT_COLUMNS = ("scheme", "noise", "level", "seed", *FIELD_NAMES,
                  "psnr_in", "psnr_out", "final_cost", "wall_ms")


class UsageError(Exception):
    pass


def _number(text: str) -> float:
    try:
        return bench.parse_number(text)
    except bench.ConfigError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from exc


def _add_noise_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_mutually_exclusive_group()
    g.add_argument("--sigma", type=_number, help="Gaussian noise std in [0,1] intensity units (e.g. 25/255)")
    g.add_argument("--peak", type=_number, help="Poisson noise: photon count at intensity 1")
    p.add_argument("--seed", type=int, default=0)


def _add_theta_flags(p: argparse.ArgumentParser) -> None:
    d = Theta()
    p.add_argument("--planck-ratio", type=_number, default=d.planck_ratio, help="hbar^2/2m")
    p.add_argument("--interaction", type=_number, default=d.interaction, help="patch interaction strength p")
    p.add_argument("--c1", type=_number, default=d.c1, help="lower threshold knee")
    p.add_argument("--c2", type=_number, default=d.c2, help="upper threshold knee")
    p.add_argument("--patch", type=int, default=8)
    p.add_argument("--stride", type=int, default=4)


def _add_scheme_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--alpha", type=_number, default=1.0, help="nr2n renoising scale")
    p.add_argument("--d-scale", type=_number, default=0.5, help="r2r recorruption matrix D = d*I")
    p.add_argument("--m-inference", type=int, default=50, help="r2r Monte-Carlo inference draws")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="selftune", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("tune", help="tune the denoiser on one noisy image")
    p.add_argument("--scheme", default="auto", choices=("auto",) + SCHEMES)
    p.add_argument("--input", required=True, type=Path, help="noisy image")
    p.add_argument("--input2", type=Path, help="second independent noisy image (n2n)")
    p.add_argument("--clean", type=Path, help="clean image (supervised, or evaluation only)")
    p.add_argument("--weak-noise", action="store_true", help="decision tree: noise is weak (auto)")
    p.add_argument("--non-additive", action="store_true", help="decision tree: noise is not additive (auto)")
    _add_noise_flags(p)
    _add_scheme_flags(p)
    _add_theta_flags(p)
    p.add_argument("--iterations", type=int, default=100)
    p.add_argument("--lr", type=_number, default=TuneConfig.lr)
    p.add_argument("--gradient", choices=("analytic", "fd"), default="analytic")
    p.add_argument("--psnr-peak", type=_number, default=1.0)
    p.add_argument("--output", type=Path, help="denoised image (PGM)")
    p.add_argument("--report", type=Path, help="append the report row to this CSV instead of stdout")
    p.add_argument("--trace", type=Path, help="per-iteration cost/parameter CSV")

    p = sub.add_parser("denoise", help="apply the denoiser with given parameters")
    p.add_argument("--input", required=True, type=Path)
    p.add_argument("--output", required=True, type=Path)
    p.add_argument("--clean", type=Path, help="report PSNR against this image")
    p.add_argument("--psnr-peak", type=_number, default=1.0)
    _add_theta_flags(p)

    p = sub.add_parser("gradcheck", help="compare the tuning gradient with finite differences")
    p.add_argument("--scheme", default="n2n", choices=SCHEMES)
    p.add_argument("--input", required=True, type=Path)
    p.add_argument("--input2", type=Path)
    p.add_argument("--clean", type=Path)
    _add_noise_flags(p)
    _add_scheme_flags(p)
    _add_theta_flags(p)
    p.add_argument("--denoiser", choices=("dequip", "scalar"), default="dequip")
    p.add_argument("--crop", type=int, help="check on the central crop of this size")
    p.add_argument("--steps", default="1e-3,1e-4", help="comma-separated finite-difference steps")
    p.add_argument("--tol", type=_number, default=1e-3)
    p.add_argument("--iteration", type=int, default=1, help="frozen noise draw index")
    p.add_argument("--corrupt-coord", type=int, help=argparse.SUPPRESS)

    p = sub.add_parser("benchmark", help="run a benchmark sweep from a config file")
    p.add_argument("config", type=Path)
    p.add_argument("--workers", type=int, help=f"worker processes (default ${bench.WORKERS_ENV} or 1)")
    return parser


# --------------------------------------------------------------------------

def _theta(args) -> Theta:
    try:
        return Theta(args.planck_ratio, args.interaction, args.c1, args.c2)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def _model(args) -> NoiseModel | None:
    if args.sigma is not None:
        return NoiseModel.gaussian(args.sigma, args.seed)
    if args.peak is not None:
        return NoiseModel.poisson(args.peak, args.seed)
    return None


def _crop(img, size):
    return img if size is None else bench.center_crop(img, size)


def _load_inputs(args, crop=None) -> TuneInputs:
    y = _crop(load_image(args.input), crop)
    y2 = _crop(load_image(args.input2), crop) if args.input2 else None
    x = _crop(load_image(args.clean), crop) if args.clean else None
    try:
        return TuneInputs(y, y2, x)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def _resolve_scheme(args, model) -> TuneScheme:
    tag = args.scheme
    if tag == "auto":
        chosen = select_scheme(
            has_two_noisy=args.input2 is not None,
            gaussian_zero_mean=model is not None and model.is_gaussian,
            weak_noise=args.weak_noise,
            additive=not args.non_additive and model is not None and model.is_gaussian,
        )
        if chosen is None:
            raise SchemeUnavailable(
                "no scheme applies: need two independent noisy versions, zero-mean Gaussian "
                "noise, weak noise or additive noise"
            )
        tag = chosen.tag
        log.info("auto scheme resolved to %s", tag)
    return TuneScheme(tag, alpha=args.alpha, d_scale=args.d_scale, m_inference=args.m_inference)


def _fmt(v) -> str:
    return bench._fmt(v)


def cmd_tune(args, out=None) -> int:
    out = out or sys.stdout
    model = _model(args)
    inputs = _load_inputs(args)
    scheme = _resolve_scheme(args, model)
    denoiser = DequipDenoiser(args.patch, args.stride, _theta(args))
    cfg = TuneConfig(iterations=args.iterations, lr=args.lr, seed=args.seed,
                     gradient=args.gradient, psnr_peak=args.psnr_peak)
    report = tune(scheme, inputs, model, cfg, denoiser,
                  callback=lambda k, c, u: log.debug("iter %d cost %.6g", k, c))
    row = {"scheme": report.scheme, "noise": model.kind if model else "",
           "level": f"{model.level:.6g}" if model else "", "seed": str(args.seed),
           "psnr_in": _fmt(report.psnr_in), "psnr_out": _fmt(report.psnr_out),
           "final_cost": f"{report.final_cost:.8g}", "wall_ms": f"{report.wall_ms:.0f}"}
    for name in FIELD_NAMES:
        row[name] = f"{getattr(report.theta_hat, name):.8g}"
    if args.report:
        exists = args.report.exists() and args.report.stat().st_size > 0
        with args.report.open("a", newline="") as fh:
            w = csv.DictWriter(fh, REPORT_COLUMNS, lineterminator="\n")
            if not exists:
                w.writeheader()
            w.writerow(row)
    else:
        w = csv.DictWriter(out, REPORT_COLUMNS, lineterminator="\n")
        w.writeheader()
        w.writerow(row)
    if args.trace:
        with args.trace.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(("iteration", "cost", *FIELD_NAMES))
            for k, (c, u) in enumerate(zip(report.cost_trace, report.param_trace), start=1):
                th = denoiser.params(u)
                w.writerow((k, f"{c:.10g}", *(f"{getattr(th, n):.8g}" for n in FIELD_NAMES)))
    if args.output:
        save_image(report.x_hat, args.output)
    return 0


def cmd_denoise(args, out=None) -> int:
    out = out or sys.stdout
    theta = _theta(args)
    y = load_image(args.input)
    x_hat = DequipDenoiser(args.patch, args.stride).apply(y, theta)
    save_image(x_hat, args.output)
    if args.clean:
        x = load_image(args.clean)
        print(f"psnr_in,psnr_out\n{_fmt(psnr(y, x, args.psnr_peak))},{_fmt(psnr(x_hat, x, args.psnr_peak))}",
              file=out)
    return 0


def cmd_gradcheck(args, out=None) -> int:
    out = out or sys.stdout
    model = _model(args)
    inputs = _load_inputs(args, args.crop)
    scheme = TuneScheme(args.scheme, alpha=args.alpha, d_scale=args.d_scale, m_inference=args.m_inference)
    if args.denoiser == "scalar":
        denoiser = ScalarShrink()
    else:
        denoiser = DequipDenoiser(args.patch, args.stride, _theta(args))
    cost = SchemeCost(scheme, inputs, model, denoiser, args.seed)
    u = denoiser.initial()
    _, g = cost.value_and_grad(u, args.iteration)
    if args.corrupt_coord is not None:
        g = g.copy()
        g[args.corrupt_coord] *= 1.1
    try:
        steps = [float(s) for s in args.steps.split(",") if s.strip()]
    except ValueError as exc:
        raise UsageError(f"bad --steps: {exc}") from exc
    report = grad_check(functools.partial(cost, k=args.iteration), u, g, steps, args.tol,
                        names=denoiser.param_names)
    rows = report.rows()
    w = csv.DictWriter(out, list(rows[0]), lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: (v if isinstance(v, str) else f"{v:.10g}") for k, v in r.items()})
    print(f"# reference_step={report.reference_step:g} converged={int(report.converged)} "
          f"max_rel_err={report.max_rel_err:.3e} max_consistency_err={report.max_consistency_err:.3e}",
          file=out)
    return 0 if report.ok else EXIT_CHECK


def cmd_benchmark(args, out=None) -> int:
    out = out or sys.stdout
    cfg = bench.load_config(args.config)
    tasks = bench.make_tasks(cfg)
    log.info("benchmark: %d runs", len(tasks))
    rows = bench.run_benchmark(cfg, args.workers, progress=lambda r: log.info(
        "%s %s level=%s seed=%s psnr_out=%s %s", r["image"], r["scheme"], r["level"], r["seed"],
        r["psnr_out"], r["error"]))
    paths = bench.write_outputs(cfg, rows)
    for name, path in paths.items():
        print(f"{name}: {path}", file=out)
    failed = [r for r in rows if r["error"]]
    if failed:
        print(f"{len(failed)} of {len(rows)} runs failed", file=sys.stderr)
        return EXIT_IO
    return 0


COMMANDS = {"tune": cmd_tune, "denoise": cmd_denoise, "gradcheck": cmd_gradcheck,
            "benchmark": cmd_benchmark}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        return COMMANDS[args.command](args)
    except (SchemeUnavailable, UsageError, bench.ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, ImageFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
