"""Fourier-space operators on a periodic cube.

All fields are real numpy arrays whose last three axes are the grid axes
``(x, y, z)`` with ``indexing='ij'``; any leading axes (vector components,
tensor indices) are carried through untouched.  Transforms are real-to-complex
(``rfftn``) over the last three axes, so spectral arrays have shape
``(..., N, N, N//2 + 1)``.

Nyquist convention: first-derivative multipliers ``i k_j`` are zeroed on the
Nyquist plane of axis ``j`` (the sampled derivative of ``cos(N x / 2)`` is
identically zero on the grid), while the Laplacian keeps the full Nyquist
wavenumber.  Riesz transforms, the Leray projector and the pressure solve are
all built from the zeroed wavenumbers ``k_d`` and ``|k_d|``, so identities such
as ``P = sum R_j R_k g^{jk}`` and ``Leray = Id + R R`` hold on every mode, while
``sum_j R_j^2 = -(Id - mean)`` holds on modes strictly below Nyquist.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.fft

from .errors import NegativeTime

AXES = (-3, -2, -1)


@dataclass(frozen=True)
class WaveVectorTable:
    """Per-mode wavenumbers for the rfft layout of an ``n**3`` grid of side ``length``.

    ``k`` holds the three physical wavevector components (broadcastable arrays),
    ``kd`` the derivative wavenumbers with the Nyquist plane zeroed, ``k2`` the
    full ``|k|^2``.
    """

    n: int
    length: float
    k: tuple
    kd: tuple
    k2: np.ndarray
    kd2: np.ndarray
    inv_k2: np.ndarray
    inv_kabs: np.ndarray
    inv_kd2: np.ndarray
    inv_kdabs: np.ndarray
    dealias: np.ndarray

    @property
    def shape(self):
        return (self.n, self.n, self.n // 2 + 1)


@lru_cache(maxsize=64)
def wavevectors(n: int, length: float) -> WaveVectorTable:
    scale = 2.0 * np.pi / length
    idx_full = np.fft.fftfreq(n, d=1.0 / n)  # integer mode numbers, Nyquist = -n/2
    idx_half = np.fft.rfftfreq(n, d=1.0 / n)

    idx = (
        idx_full.reshape(n, 1, 1),
        idx_full.reshape(1, n, 1),
        idx_half.reshape(1, 1, n // 2 + 1),
    )
    k = tuple(scale * i for i in idx)
    kd = tuple(np.where(np.abs(i) == n // 2, 0.0, scale * i) for i in idx)

    shape = (n, n, n // 2 + 1)
    k2 = np.broadcast_to(k[0] ** 2 + k[1] ** 2 + k[2] ** 2, shape).copy()
    kd2 = np.broadcast_to(kd[0] ** 2 + kd[1] ** 2 + kd[2] ** 2, shape).copy()
    inv_k2 = np.zeros(shape)
    np.divide(1.0, k2, out=inv_k2, where=k2 > 0)
    inv_kabs = np.sqrt(inv_k2)
    inv_kd2 = np.zeros(shape)
    np.divide(1.0, kd2, out=inv_kd2, where=kd2 > 0)
    inv_kdabs = np.sqrt(inv_kd2)

    # 2/3 rule: keep |n_i| < n/3 on every axis
    cut = n / 3.0
    dealias = (np.abs(idx[0]) < cut) & (np.abs(idx[1]) < cut) & (np.abs(idx[2]) < cut)
    dealias = np.broadcast_to(dealias, shape).copy()

    for arr in (k2, kd2, inv_k2, inv_kabs, inv_kd2, inv_kdabs, dealias):
        arr.setflags(write=False)
    return WaveVectorTable(n, float(length), k, kd, k2, kd2, inv_k2, inv_kabs, inv_kd2, inv_kdabs, dealias)


def _table(grid) -> WaveVectorTable:
    return wavevectors(grid.n, grid.length)


def to_spectral(f, grid=None):
    """Forward real FFT over the three grid axes."""
    return scipy.fft.rfftn(np.asarray(f, dtype=float), axes=AXES)


def to_physical(fh, grid):
    n = grid.n
    return scipy.fft.irfftn(fh, s=(n, n, n), axes=AXES)


def dealias(f, grid):
    """Apply the 2/3-rule truncation to a physical-space field."""
    tab = _table(grid)
    return to_physical(to_spectral(f) * tab.dealias, grid)


def derivative(f, axis, grid, order=1):
    """Spectral ``order``-th partial derivative along ``axis`` (0, 1 or 2)."""
    tab = _table(grid)
    mult = (1j * (tab.kd[axis] if order % 2 else tab.k[axis])) ** order
    return to_physical(to_spectral(f) * mult, grid)


def gradient(f, grid):
    """Gradient of ``f`` with the derivative index prepended.

    For a scalar ``(N, N, N)`` input the result is ``(3, N, N, N)``; for a vector
    ``(3, N, N, N)`` it is ``(3, 3, N, N, N)`` with ``out[i, a] = d_i f^a``.
    """
    tab = _table(grid)
    fh = to_spectral(f)
    return np.stack([to_physical(1j * tab.kd[i] * fh, grid) for i in range(3)])


def divergence(v, grid):
    """Contract the first axis with the derivative: ``sum_j d_j v[j]``.

    Works for vectors ``(3, N, N, N)`` and for tensors ``(3, 3, N, N, N)``, where
    it returns the row divergence ``(d_j sigma_{jk})_k``.
    """
    tab = _table(grid)
    vh = to_spectral(v)
    out = sum(1j * tab.kd[j] * vh[j] for j in range(3))
    return to_physical(out, grid)


def laplacian(f, grid):
    tab = _table(grid)
    return to_physical(-tab.k2 * to_spectral(f), grid)


def inverse_laplacian(f, grid):
    """Solve ``lap g = f - mean(f)`` with ``mean(g) = 0``."""
    tab = _table(grid)
    return to_physical(-tab.inv_k2 * to_spectral(f), grid)


def riesz_transform(j, f, grid):
    """``R_j = (-lap)^{-1/2} d_j``: multiplier ``i k_j / |k|``, zero at ``k = 0``."""
    tab = _table(grid)
    return to_physical(1j * tab.kd[j] * tab.inv_kdabs * to_spectral(f), grid)


def riesz_pair(j, k, f, grid):
    """``R_j R_k f`` as a single multiplier ``-k_j k_k / |k|^2``."""
    tab = _table(grid)
    return to_physical(-tab.kd[j] * tab.kd[k] * tab.inv_kd2 * to_spectral(f), grid)


def _leray_hat(vh, tab):
    kdotv = tab.kd[0] * vh[0] + tab.kd[1] * vh[1] + tab.kd[2] * vh[2]
    return np.stack([vh[i] - tab.kd[i] * kdotv * tab.inv_kd2 for i in range(3)])


def leray_project(v, grid):
    """Orthogonal projection onto divergence-free fields; the mean is kept."""
    tab = _table(grid)
    return to_physical(_leray_hat(to_spectral(v), tab), grid)


def heat_propagate(f, tau, grid):
    """Apply the heat semigroup ``exp(tau lap)`` (unit diffusivity)."""
    if tau < 0:
        raise NegativeTime(f"heat propagation time must be nonnegative, got {tau}")
    if tau == 0:
        return np.array(f, dtype=float, copy=True)
    tab = _table(grid)
    return to_physical(np.exp(-tab.k2 * tau) * to_spectral(f), grid)


def stress_tensor(grad_d):
    """``(grad d ⊙ grad d)_{ij} = <d_i d, d_j d>`` from a ``(3, 3, ...)`` gradient."""
    return np.einsum("ia...,ja...->ij...", grad_d, grad_d)


def ericksen_stress(d, grid):
    """Ericksen stress ``grad d ⊙ grad d`` and its row divergence.

    Returns ``(stress, div)`` with shapes ``(3, 3, N, N, N)`` and ``(3, N, N, N)``.
    """
    stress = stress_tensor(gradient(d, grid))
    return stress, divergence(stress, grid)


def momentum_flux(u, grad_d):
    """``g^{jk} = u^j u^k + <d_j d, d_k d>``, the quadratic flux driving the pressure."""
    return np.einsum("j...,k...->jk...", u, u) + stress_tensor(grad_d)


def pressure_from_flux_hat(gh, tab):
    """Pressure coefficients solving ``-lap P = d_j d_k g^{jk}`` (mean-zero gauge).

    The Laplacian is inverted with the same Nyquist-zeroed wavenumbers as the
    derivatives, so ``grad P`` removes exactly the part of ``div g`` that the
    Leray projector would remove.
    """
    ph = np.zeros(tab.shape, dtype=complex)
    for j in range(3):
        for k in range(3):
            ph -= tab.kd[j] * tab.kd[k] * gh[j, k]
    return ph * tab.inv_kd2


def solve_pressure(u, d, grid, dealiased=False):
    """Mean-zero pressure with ``-lap P = div div (u⊗u + grad d ⊙ grad d)``.

    Equivalently ``P = sum_{jk} R_j R_k (g^{jk})``.  With ``dealiased=True`` the
    flux is 2/3-truncated first, matching what the time stepper uses.
    """
    tab = _table(grid)
    gh = to_spectral(momentum_flux(u, gradient(d, grid)))
    if dealiased:
        gh = gh * tab.dealias
    return to_physical(pressure_from_flux_hat(gh, tab), grid)
