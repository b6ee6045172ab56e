"""Toy denoisers with closed-form behaviour, used to validate the tuning
machinery independently of the patch denoiser."""
from __future__ import annotations

import numpy as np


class ScalarShrink:
    """``A_theta(y) = theta * y`` with a single unconstrained parameter."""

    n_params = 1
    param_names = ("scale",)

    def __init__(self, theta0: float = 1.0):
        self.theta0 = float(theta0)

    def initial(self) -> np.ndarray:
        return np.array([self.theta0])

    def params(self, u) -> float:
        return float(np.asarray(u)[0])

    def __call__(self, y, u) -> np.ndarray:
        return float(np.asarray(u)[0]) * np.asarray(y, dtype=np.float64)

    def jacobian(self, y, u):
        y = np.asarray(y, dtype=np.float64)
        return self(y, u), y[None].copy()


def shrink_optimum(x, sigma: float) -> float:
    """Minimiser of ``E||theta*y - x||^2`` for ``y = x + N(0, sigma^2)``."""
    energy = float(np.sum(np.asarray(x, dtype=np.float64) ** 2))
    return energy / (energy + np.size(x) * sigma**2)


class Identity:
    """``A_theta(y) = y`` whatever ``theta``."""

    n_params = 1
    param_names = ("unused",)

    def initial(self) -> np.ndarray:
        return np.zeros(1)

    def params(self, u) -> float:
        return float(np.asarray(u)[0])

    def __call__(self, y, u) -> np.ndarray:
        return np.asarray(y, dtype=np.float64).copy()

    def jacobian(self, y, u):
        y = np.asarray(y, dtype=np.float64)
        return y.copy(), np.zeros((1,) + y.shape)
