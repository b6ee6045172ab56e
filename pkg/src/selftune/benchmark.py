"""Benchmark sweeps: simulate noise on clean images, tune every requested
scheme plus the supervised gold standard, and tabulate output PSNR.

A benchmark is fully described by one INI-style file::

    [benchmark]
    images = path/to/clean/images
    crop = 96
    noise = gaussian          ; or poisson
    levels = 10/255, 25/255, 50/255
    schemes = n2n, nac, nr2n, r2r
    seeds = 0, 1
    output = results

    [tune]
    iterations = 100
    lr = 1.0

    [dequip]
    patch = 8
    stride = 4

Relative paths are resolved against the config file's directory.
"""
from __future__ import annotations

import configparser
import csv
import io
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields, replace
from fractions import Fraction
from pathlib import Path

import numpy as np

from .dequip import FIELD_NAMES, DequipDenoiser, Theta
from .imaging import load_image
from .noise import STREAM_SIMULATE, NoiseModel, make_rng
from .tuning import SCHEMES, TuneConfig, TuneInputs, TuneScheme, tune

WORKERS_ENV = "SELFTUNE_WORKERS"
IMAGE_SUFFIXES = (".pgm", ".png")

RESULT_COLUMNS = ("image", "scheme", "noise", "level", "seed", "psnr_in", "psnr_out",
                  *FIELD_NAMES, "final_cost", "wall_ms", "error")
SUMMARY_COLUMNS = ("scheme", "noise", "level", "n", "psnr_in_mean", "psnr_out_mean",
                   "psnr_out_std_images", "psnr_out_std_seeds", "gap_to_gold_db")
TIMING_COLUMNS = ("wall_ms",)


class ConfigError(ValueError):
    pass


@dataclass
class BenchmarkConfig:
    images: Path
    levels: list[float]
    schemes: list[str]
    seeds: list[int] = field(default_factory=lambda: [0])
    noise: str = "gaussian"
    crop: int | None = None
    output: Path = Path("results")
    tune: TuneConfig = field(default_factory=TuneConfig)
    alpha: float = 1.0
    d_scale: float = 0.5
    m_inference: int = 50
    patch: int = 8
    stride: int = 4
    theta0: Theta = field(default_factory=Theta)
    max_images: int | None = None
    gold: bool = True

    def __post_init__(self):
        if not self.levels:
            raise ConfigError("at least one noise level is required")
        if not self.schemes:
            raise ConfigError("at least one scheme is required")
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        for tag in self.schemes:
            if tag not in SCHEMES:
                raise ConfigError(f"unknown scheme {tag!r}")
        if self.noise not in ("gaussian", "poisson"):
            raise ConfigError(f"unknown noise kind {self.noise!r}")
        if self.noise == "poisson" and "r2r" in self.schemes:
            raise ConfigError("r2r requires Gaussian noise")

    @property
    def all_schemes(self) -> list[str]:
        tags = list(dict.fromkeys(self.schemes))
        if self.gold and "supervised" not in tags:
            tags.insert(0, "supervised")
        return tags

    def scheme(self, tag: str) -> TuneScheme:
        return TuneScheme(tag, alpha=self.alpha, d_scale=self.d_scale, m_inference=self.m_inference)

    def image_paths(self) -> list[Path]:
        if self.images.is_file():
            paths = [self.images]
        elif self.images.is_dir():
            paths = sorted(p for p in self.images.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
        else:
            raise ConfigError(f"image path {self.images} does not exist")
        if self.max_images is not None:
            paths = paths[: self.max_images]
        if not paths:
            raise ConfigError(f"no .pgm/.png images found in {self.images}")
        return paths


def parse_number(text: str) -> float:
    """Parse ``0.1``, ``25/255`` and the like."""
    text = text.strip()
    try:
        return float(Fraction(text))
    except (ValueError, ZeroDivisionError) as exc:
        raise ConfigError(f"not a number: {text!r}") from exc


def _split(text: str) -> list[str]:
    return [t.strip() for t in text.replace("\n", ",").split(",") if t.strip()]


def load_config(path) -> BenchmarkConfig:
    path = Path(path)
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    if not parser.read(path):
        raise ConfigError(f"cannot read config file {path}")
    if "benchmark" not in parser:
        raise ConfigError("missing [benchmark] section")
    base = path.parent
    sec = parser["benchmark"]
    try:
        kwargs = dict(
            images=base / sec["images"],
            levels=[parse_number(v) for v in _split(sec.get("levels", ""))],
            schemes=[s.lower() for s in _split(sec.get("schemes", ""))],
            seeds=[int(s) for s in _split(sec.get("seeds", "0"))],
            noise=sec.get("noise", "gaussian").strip().lower(),
            output=base / sec.get("output", "results"),
            gold=sec.getboolean("gold", True),
        )
        if "crop" in sec:
            kwargs["crop"] = int(sec["crop"]) or None
        if "max_images" in sec:
            kwargs["max_images"] = int(sec["max_images"])
        tune_kwargs = {}
        if "tune" in parser:
            tsec = parser["tune"]
            for f in fields(TuneConfig):
                if f.name in tsec and f.name not in ("theta0", "seed"):
                    raw = tsec[f.name]
                    tune_kwargs[f.name] = raw.strip() if f.name == "gradient" else (
                        int(raw) if f.name == "iterations" else parse_number(raw))
            for key in ("alpha", "d_scale"):
                if key in tsec:
                    kwargs[key] = parse_number(tsec[key])
            if "m_inference" in tsec:
                kwargs["m_inference"] = int(tsec["m_inference"])
        kwargs["tune"] = TuneConfig(**tune_kwargs)
        if "dequip" in parser:
            dsec = parser["dequip"]
            kwargs["patch"] = int(dsec.get("patch", 8))
            kwargs["stride"] = int(dsec.get("stride", 4))
            defaults = Theta()
            kwargs["theta0"] = Theta(**{
                name: parse_number(dsec[name]) if name in dsec else getattr(defaults, name)
                for name in FIELD_NAMES
            })
    except (KeyError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"invalid config: {exc}") from exc
    return BenchmarkConfig(**kwargs)


def center_crop(img: np.ndarray, size: int | None) -> np.ndarray:
    if size is None:
        return img
    h, w = img.shape
    if size > min(h, w):
        raise ConfigError(f"crop {size} larger than image {w}x{h}")
    top, left = (h - size) // 2, (w - size) // 2
    return img[top : top + size, left : left + size].copy()


@dataclass(frozen=True)
class _Task:
    image_index: int
    image_id: str
    image_path: str
    level_index: int
    level: float
    seed: int
    scheme: str


def _simulate(cfg: BenchmarkConfig, x: np.ndarray, task: _Task):
    model = NoiseModel(cfg.noise, task.level, task.seed)
    key = (task.seed, STREAM_SIMULATE, task.image_index, task.level_index)
    y = model.corrupt(x, make_rng(*key, 0))
    y2 = model.corrupt(x, make_rng(*key, 1))
    return model, y, y2


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return f"{v:.6f}"
    return str(v)


def run_task(cfg: BenchmarkConfig, task: _Task) -> dict:
    row = {"image": task.image_id, "scheme": task.scheme, "noise": cfg.noise,
           "level": f"{task.level:.6g}", "seed": str(task.seed)}
    try:
        x = center_crop(load_image(task.image_path), cfg.crop)
        model, y, y2 = _simulate(cfg, x, task)
        inputs = TuneInputs(y, y2 if task.scheme == "n2n" else None, x)
        denoiser = DequipDenoiser(cfg.patch, cfg.stride, cfg.theta0)
        tcfg = replace(cfg.tune, seed=task.seed)
        report = tune(cfg.scheme(task.scheme), inputs, model, tcfg, denoiser)
        row.update(psnr_in=_fmt(report.psnr_in), psnr_out=_fmt(report.psnr_out),
                   final_cost=f"{report.final_cost:.8g}", wall_ms=f"{report.wall_ms:.0f}", error="")
        for name in FIELD_NAMES:
            row[name] = f"{getattr(report.theta_hat, name):.8g}"
    except Exception as exc:  # recorded per row, reported by the exit status
        row["error"] = f"{type(exc).__name__}: {exc}".replace("\n", " ")
    return {col: row.get(col, "") for col in RESULT_COLUMNS}


def _run_task_star(args):
    return run_task(*args)


def make_tasks(cfg: BenchmarkConfig) -> list[_Task]:
    tasks = []
    for ii, path in enumerate(cfg.image_paths()):
        for li, level in enumerate(cfg.levels):
            for seed in cfg.seeds:
                for tag in cfg.all_schemes:
                    tasks.append(_Task(ii, path.stem, str(path), li, level, seed, tag))
    return tasks


def default_workers() -> int:
    raw = os.environ.get(WORKERS_ENV)
    if raw:
        return max(1, int(raw))
    return 1


def run_benchmark(cfg: BenchmarkConfig, workers: int | None = None, progress=None) -> list[dict]:
    """Run every (image, level, seed, scheme) combination; rows sorted deterministically."""
    tasks = make_tasks(cfg)
    workers = default_workers() if workers is None else max(1, workers)
    rows = []
    if workers == 1:
        for task in tasks:
            rows.append(run_task(cfg, task))
            if progress:
                progress(rows[-1])
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for row in pool.map(_run_task_star, [(cfg, t) for t in tasks]):
                rows.append(row)
                if progress:
                    progress(row)
    order = {tag: i for i, tag in enumerate(SCHEMES)}
    rows.sort(key=lambda r: (r["image"], order[r["scheme"]], float(r["level"]), int(r["seed"])))
    return rows


def _float(text: str) -> float:
    return math.inf if text == "inf" else float(text)


def summarize(rows: list[dict]) -> list[dict]:
    """Mean/std of output PSNR per scheme x level.

    ``psnr_out_std_images`` is the spread across images of the per-image
    (seed-averaged) means; ``psnr_out_std_seeds`` the per-image spread across
    seeds, averaged over images.  Both are population standard deviations.
    """
    ok = [r for r in rows if not r["error"]]
    groups: dict[tuple, dict[str, list]] = {}
    for r in ok:
        key = (r["scheme"], r["noise"], r["level"])
        groups.setdefault(key, {}).setdefault(r["image"], []).append(r)
    gold = {}
    for (tag, noise, level), per_image in groups.items():
        if tag == "supervised":
            vals = [_float(r["psnr_out"]) for rs in per_image.values() for r in rs]
            gold[(noise, level)] = float(np.mean(vals))
    order = {tag: i for i, tag in enumerate(SCHEMES)}
    out = []
    for key in sorted(groups, key=lambda k: (k[1], float(k[2]), order[k[0]])):
        tag, noise, level = key
        per_image = groups[key]
        outs = [_float(r["psnr_out"]) for rs in per_image.values() for r in rs]
        ins = [_float(r["psnr_in"]) for rs in per_image.values() for r in rs]
        image_means = [np.mean([_float(r["psnr_out"]) for r in rs]) for rs in per_image.values()]
        seed_stds = [np.std([_float(r["psnr_out"]) for r in rs]) for rs in per_image.values()]
        mean_out = float(np.mean(outs))
        g = gold.get((noise, level))
        out.append({
            "scheme": tag, "noise": noise, "level": level, "n": str(len(outs)),
            "psnr_in_mean": _fmt(float(np.mean(ins))),
            "psnr_out_mean": _fmt(mean_out),
            "psnr_out_std_images": _fmt(float(np.std(image_means))),
            "psnr_out_std_seeds": _fmt(float(np.mean(seed_stds))),
            "gap_to_gold_db": _fmt(g - mean_out) if g is not None else "",
        })
    return out


def to_csv(rows: list[dict], columns, exclude=()) -> str:
    cols = [c for c in columns if c not in exclude]
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=cols, lineterminator="\n", extrasaction="ignore")
    writer.writeheader()
    writer.writerows(rows)
    return buf.getvalue()


# --------------------------------------------------------------------------
# plot
# --------------------------------------------------------------------------

_PALETTE = {"supervised": "#000000", "n2n": "#1f77b4", "nac": "#2ca02c",
            "nr2n": "#d62728", "r2r": "#ff7f0e"}


def plot_svg(summary: list[dict], title: str = "Output PSNR vs input PSNR") -> str:
    """Output-vs-input PSNR lines per scheme with +-1 std (across images) bands."""
    series: dict[str, list[tuple[float, float, float]]] = {}
    for r in summary:
        series.setdefault(r["scheme"], []).append(
            (_float(r["psnr_in_mean"]), _float(r["psnr_out_mean"]), _float(r["psnr_out_std_images"])))
    pts = [p for s in series.values() for p in s if all(map(math.isfinite, p))]
    width, height, margin = 640, 440, 60
    if not pts:
        return (f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">'
                f'<text x="20" y="40">no data</text></svg>\n')
    x_lo, x_hi = min(p[0] for p in pts), max(p[0] for p in pts)
    y_lo = min(p[1] - p[2] for p in pts)
    y_hi = max(p[1] + p[2] for p in pts)
    x_lo, x_hi = (x_lo - 1, x_hi + 1)
    y_lo, y_hi = (math.floor(y_lo) - 1, math.ceil(y_hi) + 1)

    def sx(v):
        return margin + (v - x_lo) / (x_hi - x_lo) * (width - 2 * margin)

    def sy(v):
        return height - margin - (v - y_lo) / (y_hi - y_lo) * (height - 2 * margin)

    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
             f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="12">',
             f'<rect width="{width}" height="{height}" fill="white"/>',
             f'<text x="{width / 2:.1f}" y="24" text-anchor="middle" font-size="15">{title}</text>',
             f'<line x1="{margin}" y1="{height - margin}" x2="{width - margin}" y2="{height - margin}" stroke="black"/>',
             f'<line x1="{margin}" y1="{margin}" x2="{margin}" y2="{height - margin}" stroke="black"/>',
             f'<text x="{width / 2:.1f}" y="{height - 20}" text-anchor="middle">input PSNR (dB)</text>',
             f'<text x="18" y="{height / 2:.1f}" text-anchor="middle" '
             f'transform="rotate(-90 18 {height / 2:.1f})">output PSNR (dB)</text>']
    for k in range(6):
        xv = x_lo + k * (x_hi - x_lo) / 5
        yv = y_lo + k * (y_hi - y_lo) / 5
        parts.append(f'<text x="{sx(xv):.1f}" y="{height - margin + 16}" text-anchor="middle">{xv:.1f}</text>')
        parts.append(f'<text x="{margin - 6}" y="{sy(yv) + 4:.1f}" text-anchor="end">{yv:.1f}</text>')
    for idx, (tag, s) in enumerate(series.items()):
        s = sorted(p for p in s if all(map(math.isfinite, p)))
        if not s:
            continue
        color = _PALETTE.get(tag, "#7f7f7f")
        upper = " ".join(f"{sx(a):.1f},{sy(b + c):.1f}" for a, b, c in s)
        lower = " ".join(f"{sx(a):.1f},{sy(b - c):.1f}" for a, b, c in reversed(s))
        parts.append(f'<polygon points="{upper} {lower}" fill="{color}" fill-opacity="0.15" stroke="none"/>')
        line = " ".join(f"{sx(a):.1f},{sy(b):.1f}" for a, b, _ in s)
        dash = ' stroke-dasharray="6,3"' if tag == "supervised" else ""
        parts.append(f'<polyline points="{line}" fill="none" stroke="{color}" stroke-width="2"{dash}/>')
        for a, b, _ in s:
            parts.append(f'<circle cx="{sx(a):.1f}" cy="{sy(b):.1f}" r="3" fill="{color}"/>')
        ly = margin + 16 * idx
        label = "gold standard" if tag == "supervised" else tag
        parts.append(f'<line x1="{margin + 12}" y1="{ly}" x2="{margin + 36}" y2="{ly}" stroke="{color}" stroke-width="2"{dash}/>')
        parts.append(f'<text x="{margin + 42}" y="{ly + 4}">{label}</text>')
    # identity reference: output = input
    parts.append(f'<line x1="{sx(max(x_lo, y_lo)):.1f}" y1="{sy(max(x_lo, y_lo)):.1f}" '
                 f'x2="{sx(min(x_hi, y_hi)):.1f}" y2="{sy(min(x_hi, y_hi)):.1f}" '
                 f'stroke="#999999" stroke-dasharray="2,3"/>')
    parts.append("</svg>\n")
    return "\n".join(parts)


def write_outputs(cfg: BenchmarkConfig, rows: list[dict]) -> dict[str, Path]:
    out = Path(cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    summary = summarize(rows)
    paths = {"results": out / "results.csv", "summary": out / "summary.csv", "plot": out / "psnr.svg"}
    paths["results"].write_text(to_csv(rows, RESULT_COLUMNS))
    paths["summary"].write_text(to_csv(summary, SUMMARY_COLUMNS))
    paths["plot"].write_text(plot_svg(summary))
    return paths
