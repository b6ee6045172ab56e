"""Per-image parameter tuning: cost functions, Adam loop and inference rules.

Five schemes are supported:

``supervised``  fit ``A(y)`` to the clean image (gold standard, needs ``x``)
``n2n``         fit ``A(y)`` to a second independent noisy image ``y2``
``nac``         fit ``A(y + n_s)`` to ``y``, infer ``A(y)``
``nr2n``        same cost with ``n_s`` scaled by ``alpha``, infer
                ``((1 + alpha^2) A(z) - z) / alpha^2``
``r2r``         fit ``A(y + d n_s)`` to ``y - n_s / d``, infer by averaging
                ``A`` over ``M`` fresh recorruptions

The stochastic schemes draw a new noise field at every iteration ``k`` from
the stream ``(seed, STREAM_TRAIN, k)``; inference draws use
``(seed, STREAM_INFER, m)``.
"""
from __future__ import annotations

import functools
import math
import time
from dataclasses import dataclass, field, replace
from typing import Any

import numpy as np

from . import grad as gradmod
from .imaging import as_image, psnr
from .noise import (
    STREAM_INFER,
    STREAM_TRAIN,
    NoiseModel,
    RecorruptConfig,
    make_rng,
    recorrupt_input,
    recorrupt_pair,
    renoise,
)

SCHEMES = ("supervised", "n2n", "nac", "nr2n", "r2r")
UNSUPERVISED = ("n2n", "nac", "nr2n", "r2r")


class SchemeUnavailable(ValueError):
    """The data at hand do not satisfy the requirements of a scheme."""


@dataclass(frozen=True)
class TuneScheme:
    tag: str
    alpha: float = 1.0
    d_scale: float = 0.5
    m_inference: int = 50

    def __post_init__(self):
        if self.tag not in SCHEMES:
            raise ValueError(f"unknown scheme {self.tag!r}; expected one of {', '.join(SCHEMES)}")
        if not 0 < self.alpha <= 1:
            raise ValueError("alpha must lie in (0, 1]")

    def recorrupt_config(self, model: NoiseModel) -> RecorruptConfig:
        return RecorruptConfig(sigma=model.sigma, d_scale=self.d_scale, m_inference=self.m_inference)


@dataclass(frozen=True)
class TuneConfig:
    iterations: int = 100
    # step size in softplus coordinates of [0,1]-scale parameters; at 1.0 the
    # noisier recorruption costs random-walk the thresholds on small images
    lr: float = 0.3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    theta0: Any = None
    gradient: str = "analytic"
    fd_step: float = gradmod.DEFAULT_STEP
    psnr_peak: float = 1.0

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.lr < 0:
            raise ValueError("learning rate must be nonnegative")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("Adam betas must lie in [0, 1)")
        if not self.eps > 0:
            raise ValueError("Adam epsilon must be positive")
        if self.gradient not in ("analytic", "fd"):
            raise ValueError("gradient must be 'analytic' or 'fd'")


@dataclass
class TuneInputs:
    """Observed data.  ``x`` is the clean image: the supervised scheme fits
    to it, the other schemes only use it to report output PSNR."""

    y: np.ndarray
    y2: np.ndarray | None = None
    x: np.ndarray | None = None

    def __post_init__(self):
        self.y = as_image(self.y)
        for name in ("y2", "x"):
            other = getattr(self, name)
            if other is not None:
                other = as_image(other)
                if other.shape != self.y.shape:
                    raise ValueError(f"{name} has shape {other.shape}, expected {self.y.shape}")
                setattr(self, name, other)


@dataclass
class TuneReport:
    scheme: str
    theta_hat: Any
    u_hat: np.ndarray
    cost_trace: list[float]
    x_hat: np.ndarray
    psnr_in: float | None = None
    psnr_out: float | None = None
    wall_ms: float = 0.0
    param_trace: list[np.ndarray] = field(default_factory=list)

    @property
    def final_cost(self) -> float:
        return self.cost_trace[-1]


# --------------------------------------------------------------------------
# scheme selection and availability
# --------------------------------------------------------------------------

def select_scheme(has_two_noisy: bool, gaussian_zero_mean: bool, weak_noise: bool,
                  additive: bool) -> TuneScheme | None:
    """Walk the data-availability decision tree; ``None`` means unsupported."""
    if has_two_noisy:
        return TuneScheme("n2n")
    if gaussian_zero_mean:
        return TuneScheme("r2r")
    if weak_noise:
        return TuneScheme("nac")
    if additive:
        return TuneScheme("nr2n")
    return None


def check_available(scheme: TuneScheme, inputs: TuneInputs, model: NoiseModel | None) -> None:
    tag = scheme.tag
    if tag == "supervised" and inputs.x is None:
        raise SchemeUnavailable("supervised tuning needs the clean ground-truth image")
    if tag == "n2n" and inputs.y2 is None:
        raise SchemeUnavailable(
            "n2n needs two independent noisy versions of the same image; with a single "
            "noisy image use r2r (zero-mean Gaussian noise), nac (weak noise) or nr2n (additive noise)"
        )
    if tag in ("nac", "nr2n", "r2r") and model is None:
        raise SchemeUnavailable(f"{tag} needs a known noise model to simulate extra noise")
    if tag == "r2r" and not model.is_gaussian:
        raise SchemeUnavailable("r2r needs zero-mean Gaussian noise with known sigma")
    if tag == "nr2n" and not model.is_gaussian and scheme.alpha != 1:
        raise SchemeUnavailable("nr2n with alpha != 1 is only defined for Gaussian noise")


# --------------------------------------------------------------------------
# cost functions
# --------------------------------------------------------------------------

def squared_error(a, b) -> float:
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    return float(np.sum((a - b) ** 2))


def cost_supervised(denoiser, u, y, x) -> float:
    return squared_error(denoiser(y, u), x)


def cost_n2n(denoiser, u, y, y2) -> float:
    return squared_error(denoiser(y, u), y2)


def cost_nac(denoiser, u, y, z) -> float:
    return squared_error(denoiser(z, u), y)


def cost_nr2n(denoiser, u, y, z) -> float:
    # same functional form as NaC; the schemes differ at inference
    return cost_nac(denoiser, u, y, z)


def cost_r2r(denoiser, u, z1, z2) -> float:
    return squared_error(denoiser(z1, u), z2)


class SchemeCost:
    """The tuning objective of one scheme at iteration ``k``.

    Evaluating twice with the same ``k`` reuses the same noise draw, so the
    object can be frozen with ``functools.partial(cost, k=k)`` and handed to
    :func:`selftune.grad.grad_central`.
    """

    def __init__(self, scheme: TuneScheme, inputs: TuneInputs, model: NoiseModel | None,
                 denoiser, seed: int = 0):
        check_available(scheme, inputs, model)
        if scheme.tag != "supervised":
            # the clean image must never reach an unsupervised objective
            inputs = replace(inputs, x=None)
        self.scheme = scheme
        self.inputs = inputs
        self.model = model
        self.denoiser = denoiser
        self.seed = seed
        self._pair_key = None
        self._pair = None

    def pair(self, k: int) -> tuple[np.ndarray, np.ndarray]:
        """``(denoiser input, target)`` for iteration ``k``."""
        if self._pair_key == k:
            return self._pair
        tag, inp = self.scheme.tag, self.inputs
        if tag == "supervised":
            pair = (inp.y, inp.x)
        elif tag == "n2n":
            pair = (inp.y, inp.y2)
        else:
            rng = make_rng(self.seed, STREAM_TRAIN, k)
            if tag == "nac":
                pair = (renoise(inp.y, self.model, 1.0, rng), inp.y)
            elif tag == "nr2n":
                pair = (renoise(inp.y, self.model, self.scheme.alpha, rng), inp.y)
            else:
                pair = recorrupt_pair(inp.y, self.scheme.recorrupt_config(self.model), rng)
        self._pair_key, self._pair = k, pair
        return pair

    def __call__(self, u, k: int = 0) -> float:
        source, target = self.pair(k)
        return squared_error(self.denoiser(source, u), target)

    def value_and_grad(self, u, k: int = 0, method: str = "analytic",
                       h: float = gradmod.DEFAULT_STEP) -> tuple[float, np.ndarray]:
        if method == "analytic" and hasattr(self.denoiser, "jacobian"):
            source, target = self.pair(k)
            out, jac = self.denoiser.jacobian(source, u)
            resid = out - target
            value = float(np.sum(resid**2))
            g = 2.0 * np.tensordot(jac, resid, axes=resid.ndim)
        else:
            value = self(u, k)
            g = gradmod.grad_central(functools.partial(self, k=k), u, h)
        return value, np.asarray(g, dtype=np.float64)


# --------------------------------------------------------------------------
# optimisation
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros(cls, n: int) -> AdamState:
        return cls(np.zeros(n), np.zeros(n), 0)


def adam_step(state: AdamState, u, g, cfg: TuneConfig) -> tuple[AdamState, np.ndarray]:
    g = np.asarray(g, dtype=np.float64)
    if not np.all(np.isfinite(g)):
        raise FloatingPointError(f"non-finite gradient {g}")
    t = state.t + 1
    m = cfg.beta1 * state.m + (1 - cfg.beta1) * g
    v = cfg.beta2 * state.v + (1 - cfg.beta2) * g * g
    m_hat = m / (1 - cfg.beta1**t)
    v_hat = v / (1 - cfg.beta2**t)
    u_new = np.asarray(u, dtype=np.float64) - cfg.lr * m_hat / (np.sqrt(v_hat) + cfg.eps)
    return AdamState(m, v, t), u_new


def _initial_free(denoiser, cfg: TuneConfig) -> np.ndarray:
    if cfg.theta0 is None:
        return np.asarray(denoiser.initial(), dtype=np.float64)
    theta0 = cfg.theta0
    if hasattr(theta0, "to_free"):
        return theta0.to_free()
    return np.atleast_1d(np.asarray(theta0, dtype=np.float64))


def infer(scheme: TuneScheme, u_hat, inputs: TuneInputs, model: NoiseModel | None,
          cfg: TuneConfig, denoiser) -> np.ndarray:
    """Final estimate for tuned parameters ``u_hat``."""
    y = inputs.y
    if scheme.tag in ("supervised", "n2n", "nac"):
        return denoiser(y, u_hat)
    if scheme.tag == "nr2n":
        alpha2 = scheme.alpha**2
        z = renoise(y, model, scheme.alpha, make_rng(cfg.seed, STREAM_INFER, 0))
        return ((1 + alpha2) * denoiser(z, u_hat) - z) / alpha2
    rc = scheme.recorrupt_config(model)
    acc = np.zeros_like(y)
    for m in range(rc.m_inference):
        acc += denoiser(recorrupt_input(y, rc, make_rng(cfg.seed, STREAM_INFER, m)), u_hat)
    return acc / rc.m_inference


def tune(scheme: TuneScheme, inputs: TuneInputs, model: NoiseModel | None,
         cfg: TuneConfig, denoiser, callback=None) -> TuneReport:
    """Fit the denoiser parameters with Adam, then run the scheme's inference.

    ``callback(k, cost, u)`` is called after every iteration, if given.
    """
    start = time.perf_counter()
    cost = SchemeCost(scheme, inputs, model, denoiser, cfg.seed)
    u = _initial_free(denoiser, cfg)
    state = AdamState.zeros(u.size)
    trace, params = [], []
    for k in range(1, cfg.iterations + 1):
        value, g = cost.value_and_grad(u, k, cfg.gradient, cfg.fd_step)
        if not math.isfinite(value):
            raise FloatingPointError(f"non-finite cost at iteration {k}")
        trace.append(value)
        params.append(u.copy())
        state, u = adam_step(state, u, g, cfg)
        if callback is not None:
            callback(k, value, u)
    x_hat = infer(scheme, u, inputs, model, cfg, denoiser)
    report = TuneReport(scheme.tag, denoiser.params(u), u, trace, x_hat, param_trace=params)
    if inputs.x is not None:
        report.psnr_in = psnr(inputs.y, inputs.x, cfg.psnr_peak)
        report.psnr_out = psnr(x_hat, inputs.x, cfg.psnr_peak)
    report.wall_ms = (time.perf_counter() - start) * 1000.0
    return report
