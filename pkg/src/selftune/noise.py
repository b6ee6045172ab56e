"""Seeded corruption processes: forward noise models, renoising, recorruption.

Every random draw comes from :func:`make_rng`, keyed by ``(seed, *stream)``,
so that a tuning iteration can regenerate exactly the same noise field.
Noisy images are never clamped here.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Stream-id namespaces.  Keep the values stable: they are part of the
# reproducibility contract of saved benchmark results.
STREAM_SIMULATE = 0
STREAM_TRAIN = 1
STREAM_INFER = 2


@dataclass(frozen=True)
class NoiseModel:
    """Corruption process of the observed image.

    ``kind`` is ``"gaussian"`` (``level`` = std ``sigma`` in intensity units)
    or ``"poisson"`` (``level`` = photon count at intensity 1).
    """

    kind: str
    level: float
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("gaussian", "poisson"):
            raise ValueError(f"unknown noise kind {self.kind!r}")
        if not self.level > 0:
            raise ValueError(f"{self.kind} noise level must be positive, got {self.level}")

    @classmethod
    def gaussian(cls, sigma: float, seed: int = 0) -> NoiseModel:
        return cls("gaussian", float(sigma), seed)

    @classmethod
    def poisson(cls, peak: float, seed: int = 0) -> NoiseModel:
        return cls("poisson", float(peak), seed)

    @property
    def is_gaussian(self) -> bool:
        return self.kind == "gaussian"

    @property
    def sigma(self) -> float:
        if not self.is_gaussian:
            raise ValueError("sigma is only defined for Gaussian noise")
        return self.level

    def corrupt(self, x: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        if self.is_gaussian:
            return add_gaussian(x, self.level, rng)
        return add_poisson(x, self.level, rng)


@dataclass(frozen=True)
class RecorruptConfig:
    """Recorruption with ``D = d_scale * I``.

    ``sigma = 0`` is accepted and turns recorruption into the identity, which
    is handy for testing the surrounding machinery.
    """

    sigma: float
    d_scale: float = 0.5
    m_inference: int = 50

    def __post_init__(self):
        if not self.d_scale > 0:
            raise ValueError("d_scale must be positive (D must be invertible)")
        if self.m_inference < 1:
            raise ValueError("m_inference must be >= 1")
        if self.sigma < 0:
            raise ValueError("sigma must be nonnegative")


def make_rng(seed: int, *stream: int) -> np.random.Generator:
    """Independent generator for ``(seed, stream...)``.

    Built on ``SeedSequence`` spawn keys and PCG64, whose output is
    platform-independent.
    """
    ss = np.random.SeedSequence(entropy=int(seed) & (2**64 - 1), spawn_key=tuple(int(s) for s in stream))
    return np.random.Generator(np.random.PCG64(ss))


def add_gaussian(x, sigma: float, rng: np.random.Generator) -> np.ndarray:
    if sigma < 0:
        raise ValueError("sigma must be nonnegative")
    x = np.asarray(x, dtype=np.float64)
    return x + sigma * rng.standard_normal(x.shape)


def add_poisson(x, peak: float, rng: np.random.Generator) -> np.ndarray:
    """Photon-count noise returned in intensity units: ``Poisson(peak*x)/peak``."""
    if not peak > 0:
        raise ValueError("peak must be positive")
    x = np.asarray(x, dtype=np.float64)
    if np.any(x < 0):
        raise ValueError("Poisson noise requires a nonnegative image")
    return rng.poisson(peak * x).astype(np.float64) / peak


def renoise(y, model: NoiseModel, alpha: float, rng: np.random.Generator) -> np.ndarray:
    """Doubly noisy image ``z = y + n_s`` with ``n_s`` simulated from ``model``.

    For Gaussian noise ``n_s ~ N(0, (alpha*sigma)^2)``.  For Poisson noise the
    simulated field is ``Poisson(peak*y)/peak - y`` (negative values of ``y``
    treated as zero); only ``alpha = 1`` is meaningful there.
    """
    if not 0 < alpha <= 1:
        raise ValueError(f"alpha must lie in (0, 1], got {alpha}")
    y = np.asarray(y, dtype=np.float64)
    if model.is_gaussian:
        return add_gaussian(y, alpha * model.sigma, rng)
    if alpha != 1:
        raise ValueError("alpha-scaled renoising is only defined for Gaussian noise")
    rate = np.maximum(y, 0.0)
    return y + add_poisson(rate, model.level, rng) - rate


def recorrupt_pair(y, cfg: RecorruptConfig, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """``z1 = y + d*n_s`` and ``z2 = y - n_s/d`` sharing one draw ``n_s ~ N(0, sigma^2)``."""
    y = np.asarray(y, dtype=np.float64)
    n_s = cfg.sigma * rng.standard_normal(y.shape)
    return y + cfg.d_scale * n_s, y - n_s / cfg.d_scale


def recorrupt_input(y, cfg: RecorruptConfig, rng: np.random.Generator) -> np.ndarray:
    """The ``z1`` half of :func:`recorrupt_pair` (Monte-Carlo inference draws)."""
    return recorrupt_pair(y, cfg, rng)[0]
