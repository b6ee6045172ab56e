"""Central finite differences over the free parameters, and a checker for
any other gradient implementation.

Cost functions here are plain callables ``cost(u) -> float``.  Stochastic
costs must be frozen to one noise draw before being handed over (for
example ``functools.partial(cost, k=iteration)``), otherwise the differences
measure the noise rather than the slope.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

CostFn = Callable[[np.ndarray], float]

DEFAULT_STEP = 1e-3


class NonFiniteCostError(FloatingPointError):
    def __init__(self, coordinate: int, value: float):
        super().__init__(f"cost is not finite ({value}) when perturbing coordinate {coordinate}")
        self.coordinate = coordinate


def grad_central(cost: CostFn, u, h: float = DEFAULT_STEP) -> np.ndarray:
    """``g_i = (cost(u + h e_i) - cost(u - h e_i)) / 2h``."""
    if not h > 0:
        raise ValueError("step must be positive")
    u = np.asarray(u, dtype=np.float64)
    g = np.empty_like(u)
    for i in range(u.size):
        step = np.zeros_like(u)
        step[i] = h
        hi, lo = float(cost(u + step)), float(cost(u - step))
        for val in (hi, lo):
            if not math.isfinite(val):
                raise NonFiniteCostError(i, val)
        g[i] = (hi - lo) / (2.0 * h)
    return g


def relative_error(a, b) -> np.ndarray:
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-12)


@dataclass
class GradCheckReport:
    """Outcome of :func:`grad_check`.

    ``estimates`` maps each step to its central-difference gradient;
    ``consistency`` holds, for every step after the first, the per-coordinate
    relative error against the preceding (larger) step.
    """

    gradient: np.ndarray
    steps: list[float]
    estimates: dict[float, np.ndarray]
    consistency: dict[float, np.ndarray]
    reference_step: float
    converged: bool
    rel_err: np.ndarray
    tol: float
    names: Sequence[str] = field(default_factory=tuple)

    @property
    def reference(self) -> np.ndarray:
        return self.estimates[self.reference_step]

    @property
    def max_rel_err(self) -> float:
        return float(self.rel_err.max())

    @property
    def max_consistency_err(self) -> float:
        if not self.consistency:
            return 0.0
        return float(max(c.max() for c in self.consistency.values()))

    @property
    def flagged(self) -> list[int]:
        return [i for i, e in enumerate(self.rel_err) if e > self.tol]

    @property
    def ok(self) -> bool:
        return self.converged and not self.flagged

    def rows(self) -> list[dict]:
        out = []
        for i, g in enumerate(self.gradient):
            row = {"coordinate": self.names[i] if i < len(self.names) else str(i), "gradient": g}
            for h in self.steps:
                row[f"fd_h={h:g}"] = self.estimates[h][i]
            row["rel_err"] = self.rel_err[i]
            row["flagged"] = int(self.rel_err[i] > self.tol)
            out.append(row)
        return out


def grad_check(cost: CostFn, u, g, h_list: Sequence[float] = (1e-2, 1e-3, 1e-4),
               tol: float = 1e-3, names: Sequence[str] = ()) -> GradCheckReport:
    """Compare a gradient ``g`` with central differences at several steps.

    Steps are visited from largest to smallest.  The reference estimate is
    the one at the smallest step whose estimate agrees with the previous
    step's to within ``tol`` on every coordinate; if no pair agrees the
    smallest step is used and ``converged`` is False.
    """
    steps = sorted((float(h) for h in h_list), reverse=True)
    if not steps:
        raise ValueError("need at least one step")
    u = np.asarray(u, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    estimates = {h: grad_central(cost, u, h) for h in steps}
    consistency = {}
    reference, converged = steps[-1], len(steps) == 1
    for prev, h in zip(steps, steps[1:]):
        consistency[h] = relative_error(estimates[prev], estimates[h])
        if consistency[h].max() <= tol:
            reference, converged = h, True
    rel = relative_error(g, estimates[reference])
    return GradCheckReport(g, steps, estimates, consistency, reference, converged, rel, tol, tuple(names))
