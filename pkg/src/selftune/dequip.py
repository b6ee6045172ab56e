"""Patch-based adaptive-basis denoiser with interacting patches.

Each ``s x s`` patch is read as the potential of a discrete Schrodinger
operator ``H = planck_ratio * (-L) + diag(V)``, ``L`` being the 5-point
Neumann Laplacian on the patch.  The eigenvectors of ``H`` form an
image-adapted orthonormal basis; the patch is projected on it, every
coefficient but the ground-state one is attenuated by a soft-threshold gain,
and the patches are averaged back together.  Neighbouring patches interact
by raising each other's potential by ``p * |A - B| / d(A, B)^2``.

The four parameters are optimised in an unconstrained space (``ThetaFree``)
mapped through softplus so every iterate is a valid :class:`Theta`.
"""
from __future__ import annotations

import functools
import hashlib
from collections import OrderedDict
from dataclasses import astuple, dataclass

import numpy as np

from .imaging import PatchGrid, _overlap_average, as_image, extract_patches

DEFAULT_PATCH = 8
DEFAULT_STRIDE = 4


class EigenSolverError(RuntimeError):
    pass


@dataclass(frozen=True)
class Theta:
    """Denoiser parameters.

    ``planck_ratio`` is hbar^2/2m (positive), ``interaction`` is the patch
    coupling strength ``p``, ``c1 < c2`` are the knees of the threshold ramp,
    in the same intensity units as the projection coefficients.
    """

    planck_ratio: float = 2.0
    interaction: float = 0.5
    c1: float = 0.1
    c2: float = 0.3

    def __post_init__(self):
        if not self.planck_ratio > 0:
            raise ValueError(f"planck_ratio must be > 0, got {self.planck_ratio}")
        if not self.interaction >= 0:
            raise ValueError(f"interaction must be >= 0, got {self.interaction}")
        if not 0 <= self.c1 < self.c2:
            raise ValueError(f"need 0 <= c1 < c2, got c1={self.c1}, c2={self.c2}")

    def as_array(self) -> np.ndarray:
        return np.array(astuple(self), dtype=np.float64)

    def to_free(self) -> np.ndarray:
        return free_from_theta(self)


FIELD_NAMES = ("planck_ratio", "interaction", "c1", "c2")


def softplus(u):
    u = np.asarray(u, dtype=np.float64)
    return np.logaddexp(0.0, u)


def softplus_inv(v):
    """Inverse of :func:`softplus` for ``v > 0``."""
    v = np.asarray(v, dtype=np.float64)
    # log(expm1(v)) written to stay finite for large v
    return v + np.log(-np.expm1(-v))


def sigmoid(u):
    u = np.asarray(u, dtype=np.float64)
    return np.exp(-np.logaddexp(0.0, -u))


def theta_from_free(u) -> Theta:
    u = np.asarray(u, dtype=np.float64)
    if u.shape != (4,):
        raise ValueError(f"ThetaFree must have 4 entries, got shape {u.shape}")
    sp = softplus(u)
    c1 = float(sp[2])
    return Theta(float(sp[0]), float(sp[1]), c1, c1 + float(sp[3]))


def free_from_theta(theta: Theta) -> np.ndarray:
    # softplus(u) underflows to 0 for very negative u; clamp to keep it invertible
    vals = np.array([theta.planck_ratio, theta.interaction, theta.c1, theta.c2 - theta.c1])
    return softplus_inv(np.maximum(vals, 1e-300))


# --------------------------------------------------------------------------
# building blocks
# --------------------------------------------------------------------------

@functools.lru_cache(maxsize=16)
def neumann_laplacian(s: int) -> np.ndarray:
    """5-point Laplacian on an ``s x s`` grid (row-major) with mirrored borders.

    Off-diagonal entries are 1 for every grid edge and each diagonal entry is
    minus the node degree, so rows sum to zero.
    """
    n = s * s
    lap = np.zeros((n, n))
    for i in range(s):
        for j in range(s):
            k = i * s + j
            for a, b in ((i + 1, j), (i, j + 1)):
                if a < s and b < s:
                    m = a * s + b
                    lap[k, m] = lap[m, k] = 1.0
                    lap[k, k] -= 1.0
                    lap[m, m] -= 1.0
    lap.setflags(write=False)
    return lap


def _neighbour_offsets():
    return [(di, dj) for di in (-1, 0, 1) for dj in (-1, 0, 1) if (di, dj) != (0, 0)]


def interaction_field(grid: PatchGrid) -> np.ndarray:
    """``sum_B |A - B| / d(A, B)^2`` over the 8 grid neighbours of each patch."""
    patches = grid.patches
    rows, cols = grid.shape
    field = np.zeros_like(patches)
    rs = grid.row_starts.astype(np.float64)
    cs = grid.col_starts.astype(np.float64)
    for di, dj in _neighbour_offsets():
        # destination slice (patch A) and source slice (neighbour B)
        ai = slice(max(0, -di), rows - max(0, di))
        aj = slice(max(0, -dj), cols - max(0, dj))
        bi = slice(max(0, di), rows - max(0, -di))
        bj = slice(max(0, dj), cols - max(0, -dj))
        if ai.start >= ai.stop or aj.start >= aj.stop:
            continue
        d2 = (rs[bi] - rs[ai])[:, None] ** 2 + (cs[bj] - cs[aj])[None, :] ** 2
        diff = np.abs(patches[ai, aj] - patches[bi, bj])
        field[ai, aj] += diff / d2[:, :, None, None]
    return field


def interaction_potential(grid: PatchGrid, p: float) -> np.ndarray:
    """Additive potential ``p * sum_B |A - B| / d(A, B)^2`` per patch, shape of ``grid.patches``."""
    if p < 0:
        raise ValueError("interaction strength must be nonnegative")
    if p == 0:
        return np.zeros_like(grid.patches)
    return p * interaction_field(grid)


def build_hamiltonian(potential, planck_ratio: float) -> np.ndarray:
    """``planck_ratio * (-L) + diag(V)`` for an ``s x s`` potential (or a stack of them)."""
    potential = np.asarray(potential, dtype=np.float64)
    s = potential.shape[-1]
    if potential.shape[-2] != s:
        raise ValueError("potential patches must be square")
    v = potential.reshape(potential.shape[:-2] + (s * s,))
    ham = np.broadcast_to(-planck_ratio * neumann_laplacian(s), v.shape[:-1] + (s * s, s * s)).copy()
    idx = np.arange(s * s)
    ham[..., idx, idx] += v
    return ham


@dataclass(frozen=True)
class EigenBasis:
    """Ascending eigenvalues ``(..., d)`` and orthonormal eigenvector columns ``(..., d, d)``."""

    eigenvalues: np.ndarray
    vectors: np.ndarray


def eigenbasis(ham) -> EigenBasis:
    """Full symmetric eigendecomposition with a deterministic sign convention.

    Each eigenvector is flipped so that its first component that is not
    numerically zero is positive.
    """
    ham = np.asarray(ham, dtype=np.float64)
    if not np.all(np.isfinite(ham)):
        raise ValueError("Hamiltonian has non-finite entries")
    try:
        vals, vecs = np.linalg.eigh(ham)
    except np.linalg.LinAlgError as exc:
        raise EigenSolverError(f"eigendecomposition did not converge: {exc}") from exc
    mags = np.abs(vecs)
    tol = 1e-10 * mags.max(axis=-2, keepdims=True)
    first = np.argmax(mags > tol, axis=-2)
    lead = np.take_along_axis(vecs, first[..., None, :], axis=-2)
    signs = np.where(lead < 0, -1.0, 1.0)
    return EigenBasis(vals, vecs * signs)


def threshold_gain(magnitude, c1: float, c2: float):
    """Soft-threshold gain: 0 up to ``c1``, linear ramp, 1 from ``c2`` on."""
    if not 0 <= c1 < c2:
        raise ValueError(f"need 0 <= c1 < c2, got c1={c1}, c2={c2}")
    m = np.asarray(magnitude, dtype=np.float64)
    gain = np.clip((m - c1) / (c2 - c1), 0.0, 1.0)
    return float(gain) if gain.ndim == 0 else gain


# --------------------------------------------------------------------------
# full pipeline
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class _Spectrum:
    grid: PatchGrid
    signal: np.ndarray   # (n, d) noisy patch vectors
    coupling: np.ndarray  # (n, d) interaction field for p = 1
    basis: EigenBasis     # batched over n
    coeffs: np.ndarray    # (n, d) projections Q^T v


def _analyze(y: np.ndarray, planck_ratio: float, p: float, s: int, t: int) -> _Spectrum:
    grid = extract_patches(y, s, t)
    n, d = grid.shape[0] * grid.shape[1], s * s
    coupling = interaction_field(grid).reshape(n, d)
    signal = grid.patches.reshape(n, d)
    ham = build_hamiltonian((signal + p * coupling).reshape(n, s, s), planck_ratio)
    basis = eigenbasis(ham)
    coeffs = (signal[:, None, :] @ basis.vectors)[:, 0, :]
    return _Spectrum(grid, signal, coupling, basis, coeffs)


def _gains(coeffs: np.ndarray, c1: float, c2: float) -> np.ndarray:
    gains = threshold_gain(np.abs(coeffs), c1, c2)
    gains[:, 0] = 1.0
    return gains


def _to_image(spectrum: _Spectrum, patch_vectors: np.ndarray) -> np.ndarray:
    grid = spectrum.grid
    patches = patch_vectors.reshape(grid.patches.shape)
    return _overlap_average(patches, grid.row_starts, grid.col_starts, grid.image_shape)


def _synthesize(spectrum: _Spectrum, c1: float, c2: float) -> np.ndarray:
    shrunk = spectrum.coeffs * _gains(spectrum.coeffs, c1, c2)
    return _to_image(spectrum, (spectrum.basis.vectors @ shrunk[:, :, None])[:, :, 0])


def denoise(y, theta: Theta, s: int = DEFAULT_PATCH, t: int = DEFAULT_STRIDE) -> np.ndarray:
    y = as_image(y)
    spectrum = _analyze(y, theta.planck_ratio, theta.interaction, s, t)
    return _synthesize(spectrum, theta.c1, theta.c2)


def _jacobian(spectrum: _Spectrum, theta: Theta, s: int) -> tuple[np.ndarray, np.ndarray]:
    """Output image and its derivatives w.r.t. (planck_ratio, p, c1, c2).

    First-order eigenvector perturbation: for ``dH``, ``dQ = Q @ Omega`` with
    ``Omega_ij = (Q^T dH Q)_ij / (E_j - E_i)``.  The pairwise terms are folded
    with the gain derivative so that equal-gain (near-)degenerate pairs cancel
    exactly instead of through a difference of huge numbers.
    """
    E = spectrum.basis.eigenvalues
    Q = spectrum.basis.vectors
    a = spectrum.coeffs
    c1, c2 = theta.c1, theta.c2
    mag = np.abs(a)
    g = _gains(a, c1, c2)
    on_ramp = (mag > c1) & (mag < c2)
    on_ramp[:, 0] = False
    width = c2 - c1
    slope = np.where(on_ramp, 1.0 / width, 0.0)
    b = g * a
    f = g + slope * mag

    gap = E[:, None, :] - E[:, :, None]  # gap[n, i, j] = E_j - E_i
    scale = np.abs(E).max(axis=1)[:, None, None] + 1.0
    inv_gap = np.divide(1.0, gap, out=np.zeros_like(gap), where=np.abs(gap) > 1e-13 * scale)
    pair = (b[:, None, :] - f[:, :, None] * a[:, None, :]) * inv_gap

    neg_lap = -neumann_laplacian(s)
    m_planck = np.swapaxes(Q, 1, 2) @ neg_lap @ Q
    m_coupling = np.swapaxes(Q, 1, 2) @ (spectrum.coupling[:, :, None] * Q)

    # coefficient-space directions, one column per parameter
    coef = np.stack([
        b,
        (m_planck * pair).sum(axis=2),
        (m_coupling * pair).sum(axis=2),
        np.where(on_ramp, (mag - c2) / width**2, 0.0) * a,
        np.where(on_ramp, -(mag - c1) / width**2, 0.0) * a,
    ], axis=2)
    patches = Q @ coef
    image = _to_image(spectrum, patches[:, :, 0])
    jac = np.stack([_to_image(spectrum, patches[:, :, k]) for k in range(1, 5)])
    return image, jac


class DequipDenoiser:
    """The denoiser as a function of an unconstrained 4-vector ``u``.

    ``jacobian`` returns the derivative of the output image with respect to
    ``u``.  The most recent spectral decompositions are memoised, since
    threshold-only parameter changes reuse the same basis.
    """

    n_params = 4
    param_names = FIELD_NAMES

    def __init__(self, patch: int = DEFAULT_PATCH, stride: int = DEFAULT_STRIDE,
                 theta0: Theta | None = None, cache_size: int = 8):
        self.patch = patch
        self.stride = stride
        self.theta0 = theta0 if theta0 is not None else Theta()
        self._cache: OrderedDict = OrderedDict()
        self._cache_size = cache_size

    def __repr__(self):
        return f"DequipDenoiser(patch={self.patch}, stride={self.stride}, theta0={self.theta0})"

    def initial(self) -> np.ndarray:
        return free_from_theta(self.theta0)

    def params(self, u) -> Theta:
        return theta_from_free(u)

    def _spectrum(self, y: np.ndarray, theta: Theta) -> _Spectrum:
        key = (hashlib.blake2b(y.tobytes(), digest_size=16).digest(), y.shape,
               theta.planck_ratio, theta.interaction)
        spectrum = self._cache.get(key)
        if spectrum is None:
            spectrum = _analyze(y, theta.planck_ratio, theta.interaction, self.patch, self.stride)
            self._cache[key] = spectrum
            if len(self._cache) > self._cache_size:
                self._cache.popitem(last=False)
        else:
            self._cache.move_to_end(key)
        return spectrum

    def apply(self, y, theta: Theta) -> np.ndarray:
        y = as_image(y)
        return _synthesize(self._spectrum(y, theta), theta.c1, theta.c2)

    def __call__(self, y, u) -> np.ndarray:
        return self.apply(y, theta_from_free(u))

    def jacobian(self, y, u) -> tuple[np.ndarray, np.ndarray]:
        """``(A_u(y), dA/du)``, the latter with shape ``(4, H, W)``."""
        y = as_image(y)
        u = np.asarray(u, dtype=np.float64)
        theta = theta_from_free(u)
        image, jac_theta = _jacobian(self._spectrum(y, theta), theta, self.patch)
        sig = sigmoid(u)
        jac = np.empty_like(jac_theta)
        jac[0] = jac_theta[0] * sig[0]
        jac[1] = jac_theta[1] * sig[1]
        jac[2] = (jac_theta[2] + jac_theta[3]) * sig[2]
        jac[3] = jac_theta[3] * sig[3]
        return image, jac
