"""Diagnostics evaluated on flow states and trajectories.

Energies, uniformly-local L^3 norms, parabolic-cylinder quantities, local
energy balances, commutator identities for double Riesz transforms, Morrey
norms, parabolic Riesz potentials, blow-up monitoring and decay fits.

Quantities tied to an inequality with an unspecified constant are reported as
raw terms; only constant-free identities yield residuals.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Optional, Sequence

import numpy as np

from . import spectral
from .errors import (
    CylinderOutsideData,
    GridTooLarge,
    InsufficientSaves,
    InsufficientTimeSpan,
    PhiNegative,
    PhiNotSupported,
    PhiOutOfRange,
    RadiusTooLarge,
)
from .grid import LedgerEntry, integrate

MAGNITUDE_FLOOR = 1e-14


# --- pointwise densities and energies ---------------------------------------


def magnitude(f) -> np.ndarray:
    """Pointwise Euclidean magnitude over all leading (component) axes."""
    f = np.asarray(f, dtype=float)
    if f.ndim == 3:
        return np.abs(f)
    return np.sqrt(np.sum(f.reshape((-1,) + f.shape[-3:]) ** 2, axis=0))


def director_gradient(state) -> np.ndarray:
    return spectral.gradient(state.director, state.grid)


def l3_density(state) -> np.ndarray:
    """``|u|^3 + |grad d|^3`` pointwise."""
    return magnitude(state.velocity) ** 3 + magnitude(director_gradient(state)) ** 3


def energy_l3(state) -> float:
    """``E_3 = int |u|^3 + |grad d|^3``."""
    return integrate(l3_density(state), state.grid)


def energy_l2(state) -> float:
    """``E_2 = int |u|^2 + |grad d|^2``."""
    gd = director_gradient(state)
    return integrate(np.sum(state.velocity**2, axis=0) + np.sum(gd**2, axis=(0, 1)), state.grid)


def tension(d, grid) -> np.ndarray:
    """``lap d + |grad d|^2 d``, the harmonic-map tension field."""
    gd = spectral.gradient(d, grid)
    return spectral.laplacian(d, grid) + np.sum(gd * gd, axis=(0, 1)) * d


def dissipation_density(state) -> np.ndarray:
    grid = state.grid
    gu = spectral.gradient(state.velocity, grid)
    return np.sum(gu**2, axis=(0, 1)) + np.sum(tension(state.director, grid) ** 2, axis=0)


def dissipation(state) -> float:
    """``int |grad u|^2 + |lap d + |grad d|^2 d|^2``."""
    return integrate(dissipation_density(state), state.grid)


def l3_norm(f, grid) -> float:
    return integrate(magnitude(f) ** 3, grid) ** (1.0 / 3.0)


def derivative_sup_norm(f, grid, order: int) -> float:
    """``max_x |grad^order f|`` with the Frobenius norm over all indices.

    Mixed partials are evaluated once per multiset of axes and weighted by
    their multiplicity.
    """
    f = np.asarray(f, dtype=float)
    if order == 0:
        return float(np.max(magnitude(f)))
    tab = spectral.wavevectors(grid.n, grid.length)
    fh = spectral.to_spectral(f)
    total = np.zeros(grid.shape)
    for combo in itertools.combinations_with_replacement(range(3), order):
        counts = [combo.count(a) for a in range(3)]
        mult = math.factorial(order)
        for c in counts:
            mult //= math.factorial(c)
        symbol = np.ones((), dtype=complex)
        for a, c in enumerate(counts):
            if c:
                symbol = symbol * (1j * (tab.kd[a] if c % 2 else tab.k[a])) ** c
        deriv = spectral.to_physical(symbol * fh, grid)
        sq = deriv**2
        if sq.ndim > 3:
            sq = np.sum(sq.reshape((-1,) + grid.shape), axis=0)
        total += mult * sq
    return float(np.sqrt(np.max(total)))


def grad_sup_norms(state, orders=(0, 1, 2)) -> tuple:
    """``||grad^m u||_inf + ||grad^{m+1} d||_inf`` for each ``m`` in ``orders``."""
    return tuple(
        derivative_sup_norm(state.velocity, state.grid, m)
        + derivative_sup_norm(state.director, state.grid, m + 1)
        for m in orders
    )


# --- uniformly local norms ----------------------------------------------------


@dataclass(frozen=True)
class UlocParams:
    """Ball radius ``R`` and the grid stride of the sampled sup over centers.

    ``method`` is ``"direct"`` (shell-ordered summation, exactly monotone in R),
    ``"fft"`` (periodic convolution) or ``"auto"``; ``mask`` is ``"sharp"`` or
    ``"smooth"`` (one-cell linear ramp, FFT only).
    """

    radius: float
    center_stride: int = 2
    method: str = "auto"
    mask: str = "sharp"

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError("radius must be positive")
        if self.center_stride < 1:
            raise ValueError("center_stride must be a positive integer")
        if self.method not in ("auto", "direct", "fft"):
            raise ValueError(f"unknown method {self.method!r}")
        if self.mask not in ("sharp", "smooth"):
            raise ValueError(f"unknown mask {self.mask!r}")


DIRECT_COST_CAP = 4e7


def _check_radius(radius, grid):
    if radius > 0.5 * grid.length * (1 + 1e-12):
        raise RadiusTooLarge(f"radius {radius} exceeds half the box side {0.5 * grid.length}")


@lru_cache(maxsize=32)
def _ball_shells(n: int, length: float, radius: float):
    """Integer offsets inside the open ball, grouped by squared lattice distance."""
    h = length / n
    m = int(math.ceil(radius / h))
    r = np.arange(-m, m + 1)
    a, b, c = np.meshgrid(r, r, r, indexing="ij")
    s = (a * a + b * b + c * c).ravel()
    inside = s * h * h < radius * radius
    offs = np.stack([a.ravel(), b.ravel(), c.ravel()], axis=1)[inside]
    s = s[inside]
    order = np.lexsort((offs[:, 2], offs[:, 1], offs[:, 0], s))
    offs, s = offs[order], s[order]
    bounds = np.flatnonzero(np.diff(s)) + 1
    return m, tuple(np.split(offs, bounds))


def _ball_sums_direct(density, grid, radius, stride):
    n = grid.n
    m, shells = _ball_shells(n, grid.length, float(radius))
    padded = np.pad(density, m, mode="wrap")
    nc = len(range(0, n, stride))
    total = np.zeros((nc, nc, nc))
    for shell in shells:
        acc = np.zeros_like(total)
        for a, b, c in shell:
            acc += padded[m + a : m + a + n : stride, m + b : m + b + n : stride, m + c : m + c + n : stride]
        total += acc
    return total * grid.cell_volume


def _ball_kernel(grid, radius, mask):
    r = grid.distance((0.0, 0.0, 0.0))
    if mask == "sharp":
        return (r < radius).astype(float)
    return np.clip(0.5 + (radius - r) / grid.spacing, 0.0, 1.0)


def _ball_sums_fft(density, grid, radius, stride, mask="sharp"):
    kern = _ball_kernel(grid, radius, mask)
    # kernel is symmetric under x -> -x, so correlation == convolution
    conv = spectral.to_physical(spectral.to_spectral(density) * spectral.to_spectral(kern), grid)
    return np.maximum(conv[::stride, ::stride, ::stride], 0.0) * grid.cell_volume


def ball_integrals(density, grid, radius: float, stride: int = 1, method: str = "auto", mask: str = "sharp"):
    """``int_{B_radius(x)} density`` at the strided center lattice ``x = h * stride * i``."""
    _check_radius(radius, grid)
    if method == "auto":
        if mask != "sharp":
            method = "fft"
        else:
            _, shells = _ball_shells(grid.n, grid.length, float(radius))
            cost = sum(len(s) for s in shells) * len(range(0, grid.n, stride)) ** 3
            method = "direct" if cost <= DIRECT_COST_CAP else "fft"
    if method == "direct":
        if mask != "sharp":
            raise ValueError("direct summation supports the sharp mask only")
        return _ball_sums_direct(np.asarray(density, dtype=float), grid, radius, stride)
    return _ball_sums_fft(np.asarray(density, dtype=float), grid, radius, stride, mask)


def _argmax_center(sums, grid, stride):
    idx = np.unravel_index(int(np.argmax(sums)), sums.shape)
    return tuple(float(i * stride * grid.spacing) for i in idx)


def uloc_norm_detail(f, grid, params: UlocParams, density: bool = False):
    """Return ``(value, center)`` of the sampled ``sup_x (int_{B_R(x)} |f|^3)^(1/3)``.

    With ``density=True`` ``f`` is taken to already be the integrand ``|f|^3``.
    """
    dens = np.asarray(f, dtype=float) if density else magnitude(f) ** 3
    sums = ball_integrals(dens, grid, params.radius, params.center_stride, params.method, params.mask)
    return float(np.max(sums)) ** (1.0 / 3.0), _argmax_center(sums, grid, params.center_stride)


def uloc_norm(f, grid, params: UlocParams) -> float:
    """Uniformly local L^3 norm with radius ``params.radius``."""
    return uloc_norm_detail(f, grid, params)[0]


def uloc_pair_norm(state, params: UlocParams) -> float:
    """``sup_x (int_{B_R(x)} |u|^3 + |grad d|^3)^(1/3)``."""
    return uloc_norm_detail(l3_density(state), state.grid, params, density=True)[0]


def default_ledger_params(grid) -> UlocParams:
    return UlocParams(radius=0.25 * grid.length, center_stride=2, method="fft")


def ledger_entry(state, params: Optional[UlocParams] = None) -> LedgerEntry:
    params = params or default_ledger_params(state.grid)
    return LedgerEntry(
        time=float(state.time),
        E2=energy_l2(state),
        E3=energy_l3(state),
        dissipation=dissipation(state),
        uloc3=uloc_pair_norm(state, params),
        grad_sup_norms=grad_sup_norms(state),
    )


# --- time quadrature -----------------------------------------------------------


def interval_weights(times, a: float, b: float) -> np.ndarray:
    """Weights ``w`` with ``sum w_i f(t_i) = int_a^b`` of the piecewise-linear interpolant."""
    t = np.asarray(times, dtype=float)
    w = np.zeros_like(t)
    if b <= a:
        return w
    for i in range(len(t) - 1):
        t0, t1 = t[i], t[i + 1]
        lo, hi = max(a, t0), min(b, t1)
        if hi <= lo:
            continue
        span = t1 - t0
        w[i] += ((t1 - lo) ** 2 - (t1 - hi) ** 2) / (2 * span)
        w[i + 1] += ((hi - t0) ** 2 - (lo - t0) ** 2) / (2 * span)
    return w


def _check_window(times, a, b, what="interval"):
    tol = 1e-9 * max(1.0, abs(times[-1]))
    if a < times[0] - tol or b > times[-1] + tol:
        raise CylinderOutsideData(
            f"{what} [{a:.6g}, {b:.6g}] not covered by saved data [{times[0]:.6g}, {times[-1]:.6g}]"
        )


# --- global L2 balance -------------------------------------------------------


def energy_l2_balance(traj) -> np.ndarray:
    """``E_2(t) + 2 int_0^t D - E_2(0)`` at every ledger time (trapezoid in time)."""
    ledger = traj.ledger
    if len(ledger) < 2:
        raise InsufficientSaves("energy balance needs at least two saved entries")
    t = ledger.times
    e2 = ledger.column("E2")
    dis = ledger.column("dissipation")
    cum = np.concatenate([[0.0], np.cumsum(0.5 * np.diff(t) * (dis[1:] + dis[:-1]))])
    return e2 + 2.0 * cum - e2[0]


# --- parabolic cylinders -------------------------------------------------------


@dataclass(frozen=True)
class Cylinder:
    """``P_r(z0) = B_r(x0) x (t0 - r^2, t0]``."""

    center_x: tuple
    center_t: float
    radius: float

    def __post_init__(self):
        if len(self.center_x) != 3:
            raise ValueError("center_x needs three coordinates")
        if not self.radius > 0:
            raise ValueError("radius must be positive")
        object.__setattr__(self, "center_x", tuple(float(c) for c in self.center_x))

    @property
    def t_start(self) -> float:
        return self.center_t - self.radius**2


@dataclass(frozen=True)
class CylinderQuantities:
    q_u: float
    q_P: float
    q_gradd: float

    def as_dict(self):
        return {"q_u": self.q_u, "q_P": self.q_P, "q_gradd": self.q_gradd}


def _ball_mask(grid, center, radius):
    return grid.distance(center) < radius


def cylinder_quantities(traj, cyl: Cylinder) -> CylinderQuantities:
    """The three scale-invariant brackets on ``P_r(z0)``.

    ``(r^-2 int |u|^3)^(1/3)``, ``(r^-2 int |P|^(3/2))^(2/3)`` and
    ``(r^-2 int |grad d|^3)^(1/3)``, space by masked quadrature, time by the
    piecewise-linear rule over saved states.
    """
    grid = traj.states[0].grid
    _check_radius(cyl.radius, grid)
    times = traj.times
    _check_window(times, cyl.t_start, cyl.center_t, "cylinder time range")
    w = interval_weights(times, cyl.t_start, cyl.center_t)
    mask = _ball_mask(grid, cyl.center_x, cyl.radius)
    iu = ip = igd = 0.0
    for wi, s in zip(w, traj.states):
        if wi == 0.0:
            continue
        iu += wi * grid.cell_volume * np.sum(magnitude(s.velocity)[mask] ** 3)
        ip += wi * grid.cell_volume * np.sum(np.abs(s.pressure[mask]) ** 1.5)
        igd += wi * grid.cell_volume * np.sum(magnitude(director_gradient(s))[mask] ** 3)
    r2 = cyl.radius**-2
    return CylinderQuantities(
        q_u=(r2 * iu) ** (1 / 3), q_P=(r2 * ip) ** (2 / 3), q_gradd=(r2 * igd) ** (1 / 3)
    )


# --- space-time test functions -------------------------------------------------


@dataclass(frozen=True)
class SeparableTerm:
    spatial: np.ndarray
    temporal: Callable
    temporal_derivative: Callable


@dataclass(frozen=True)
class TestFunction:
    """``phi(x, t) = sum_k psi_k(x) eta_k(t)``; closed under addition."""

    __test__ = False  # not a pytest class

    terms: tuple

    @classmethod
    def separable(cls, spatial, temporal, temporal_derivative):
        return cls((SeparableTerm(np.asarray(spatial, dtype=float), temporal, temporal_derivative),))

    def __add__(self, other):
        return TestFunction(self.terms + other.terms)

    def value(self, t):
        return sum(term.spatial * term.temporal(t) for term in self.terms)

    def time_derivative(self, t):
        return sum(term.spatial * term.temporal_derivative(t) for term in self.terms)


def temporal_ramp(t_on: float, t_full: float):
    """``eta`` rising smoothly from 0 (``t <= t_on``) to 1 (``t >= t_full``) and its derivative."""
    from .grid import smooth_step, smooth_step_derivative

    width = t_full - t_on

    def eta(t):
        return float(smooth_step(np.array((t - t_on) / width)))

    def deta(t):
        return float(smooth_step_derivative(np.array((t - t_on) / width))) / width

    return eta, deta


ZERO_PHI = TestFunction(())


@dataclass(frozen=True)
class LocalEnergyTerms:
    """All pieces of the localized energy balance at time ``t``.

    ``residual = boundary + dissipation - (heat + transport + elastic + coupling)``.
    """

    boundary: float
    dissipation: float
    heat: float
    transport: float
    elastic: float
    coupling: float

    @property
    def lhs(self):
        return self.boundary + self.dissipation

    @property
    def rhs(self):
        return self.heat + self.transport + self.elastic + self.coupling

    @property
    def residual(self):
        return self.lhs - self.rhs


def _local_energy_integrands(state, phi: TestFunction):
    grid = state.grid
    t = state.time
    ph = phi.value(t)
    if np.isscalar(ph):
        ph = np.full(grid.shape, float(ph))
    dph = phi.time_derivative(t)
    if np.isscalar(dph):
        dph = np.full(grid.shape, float(dph))
    scale = max(1.0, float(np.max(np.abs(ph))))
    if np.min(ph) < -1e-14 * scale:
        raise PhiNegative(f"test function negative ({np.min(ph):.3e}) at t={t:.6g}")

    u, d, p = state.velocity, state.director, state.pressure
    gd = spectral.gradient(d, grid)
    gu = spectral.gradient(u, grid)
    gphi = spectral.gradient(ph, grid)
    hphi = spectral.gradient(gphi, grid)  # hphi[i, j] = d_i d_j phi
    lphi = spectral.laplacian(ph, grid)
    u2 = np.sum(u * u, axis=0)
    gd2 = np.sum(gd * gd, axis=(0, 1))
    sigma = spectral.stress_tensor(gd)
    ten = tension(d, grid)
    u_dot_gphi = np.sum(u * gphi, axis=0)
    eye = np.eye(3).reshape(3, 3, 1, 1, 1)

    vol = grid.cell_volume
    return {
        "energy": vol * np.sum((u2 + gd2) * ph),
        "dissipation": 2 * vol * np.sum((np.sum(gu**2, axis=(0, 1)) + np.sum(ten**2, axis=0)) * ph),
        "heat": vol * np.sum((u2 + gd2) * (dph + lphi)),
        "transport": vol * np.sum((u2 + gd2 + 2 * p) * u_dot_gphi),
        "elastic": 2 * vol * np.sum((sigma - gd2 * eye) * hphi),
        "coupling": 2 * vol * np.sum(sigma * np.einsum("i...,j...->ij...", u, gphi)),
    }


def local_energy_terms(traj, phi: TestFunction, t: Optional[float] = None) -> LocalEnergyTerms:
    """Evaluate the localized energy balance of suitable weak solutions on saved data.

    ``phi`` must vanish at the first saved time (its initial-time boundary term
    is not included); ``t`` defaults to the last saved time.
    """
    times = traj.times
    t = times[-1] if t is None else t
    _check_window(times, times[0], t, "local energy interval")
    if not phi.terms:
        return LocalEnergyTerms(0.0, 0.0, 0.0, 0.0, 0.0, 0.0)
    ph0 = phi.value(times[0])
    ref = max(float(np.max(np.abs(phi.value(t)))), 1e-300)
    if np.max(np.abs(ph0)) > 1e-10 * ref:
        raise PhiNotSupported("test function must vanish at the start of the data window")

    keep = times <= t + 1e-12 * max(1.0, abs(t))
    nxt = np.flatnonzero(~keep)
    if len(nxt):
        keep[nxt[0]] = True  # needed to interpolate at t
    w = interval_weights(times[keep], times[0], t)
    vals = [_local_energy_integrands(s, phi) for s, k in zip(traj.states, keep) if k]
    sel = times[keep]

    def integral(name):
        return float(sum(wi * v[name] for wi, v in zip(w, vals)))

    series = np.array([v["energy"] for v in vals])
    boundary = float(np.interp(t, sel, series))
    return LocalEnergyTerms(
        boundary=boundary,
        dissipation=integral("dissipation"),
        heat=integral("heat"),
        transport=integral("transport"),
        elastic=integral("elastic"),
        coupling=integral("coupling"),
    )


def local_energy_residual(traj, phi: TestFunction, t: Optional[float] = None) -> float:
    """LHS - RHS of the localized energy inequality; ``<= 0`` up to discretization."""
    return local_energy_terms(traj, phi, t).residual


# --- local L3 energy terms -----------------------------------------------------


def grad_power_cutoff(f, grad_f, phi, grad_phi, power: float = 1.5, floor: float = MAGNITUDE_FLOOR):
    """``grad(|f|^power phi)`` by the chain rule with ``|f|`` floored at ``floor``.

    ``f`` has shape ``(c, N, N, N)``, ``grad_f`` ``(3, c, N, N, N)`` with
    ``grad_f[i, a] = d_i f^a``.  Returns ``(3, N, N, N)``.
    """
    mag = np.maximum(magnitude(f), floor)
    grad_mag = np.einsum("a...,ia...->i...", f, grad_f) / mag
    return power * mag ** (power - 1) * grad_mag * phi + mag**power * grad_phi


@dataclass(frozen=True)
class LocalL3Terms:
    """Time series of the raw terms of the local L^3 energy inequality."""

    time: np.ndarray
    localized_energy: np.ndarray
    rate: np.ndarray
    gradient_term: np.ndarray
    cutoff_term: np.ndarray
    sup_ball_term: np.ndarray
    small_factor: np.ndarray


def _check_cutoff(phi, grid, center, radius):
    if np.min(phi) < -1e-12 or np.max(phi) > 1 + 1e-12:
        raise PhiOutOfRange("cutoff must take values in [0, 1]")
    outside = grid.distance(center) >= radius
    if np.any(np.abs(phi[outside]) > 1e-12):
        raise PhiOutOfRange("cutoff must be supported in the ball B_R(center)")
    gmax = float(np.max(magnitude(spectral.gradient(phi, grid))))
    if gmax > 4.0 / radius * (1 + 1e-6):
        raise PhiOutOfRange(f"|grad phi| = {gmax:.4g} exceeds 4/R = {4.0 / radius:.4g}")


def local_l3_ledger(traj, phi, center, radius: float, stride: int = 2) -> LocalL3Terms:
    """Raw terms of the local L^3 inequality for a cutoff ``phi`` with support ``B_R(center)``."""
    grid = traj.states[0].grid
    _check_radius(radius, grid)
    phi = np.asarray(phi, dtype=float)
    _check_cutoff(phi, grid, center, radius)
    gphi = spectral.gradient(phi, grid)
    gphi2 = np.sum(gphi**2, axis=0)
    support = _ball_mask(grid, center, radius)
    vol = grid.cell_volume

    loc, grad_t, cut, sup_t, small = [], [], [], [], []
    for s in traj.states:
        u = s.velocity
        gu = spectral.gradient(u, grid)
        gd = spectral.gradient(s.director, grid)
        gd_flat = gd.reshape((9,) + grid.shape)
        ggd = spectral.gradient(gd_flat, grid)
        dens = magnitude(u) ** 3 + magnitude(gd) ** 3
        loc.append(vol * np.sum(dens * phi**2))
        a = grad_power_cutoff(u, gu, phi, gphi)
        b = grad_power_cutoff(gd_flat, ggd, phi, gphi)
        grad_t.append(vol * np.sum(a**2 + b**2))
        cut.append(vol * np.sum(dens * gphi2))
        sums = ball_integrals(dens, grid, radius, stride)
        sup_t.append(radius**-2 * float(np.max(sums)) ** (5.0 / 3.0))
        small.append((vol * np.sum(dens[support])) ** (2.0 / 3.0))

    t = traj.times
    loc = np.array(loc)
    rate = np.gradient(loc, t) if len(t) > 1 else np.zeros_like(loc)
    return LocalL3Terms(t, loc, rate, np.array(grad_t), np.array(cut), np.array(sup_t), np.array(small))


# --- double Riesz commutators --------------------------------------------------


def commutator(phi, g, j: int, k: int, grid) -> np.ndarray:
    """``[phi, R_j R_k](g) = phi R_j R_k(g) - R_j R_k(phi g)``."""
    return phi * spectral.riesz_pair(j, k, g, grid) - spectral.riesz_pair(j, k, phi * g, grid)


def commutator_check(phi, g, j: int, k: int, grid) -> float:
    """Max-norm gap between the commutator from the paired multiplier and from
    two successive single Riesz transforms."""
    direct = commutator(phi, g, j, k, grid)
    composed = phi * spectral.riesz_transform(j, spectral.riesz_transform(k, g, grid), grid) - (
        spectral.riesz_transform(j, spectral.riesz_transform(k, phi * g, grid), grid)
    )
    return float(np.max(np.abs(direct - composed)))


def pressure_decomposition_residual(u, d, phi, grid, c: Optional[float] = None) -> float:
    """Max-norm residual of ``(P - c) phi = sum_jk R_jR_k(g^jk phi) + [phi, R_jR_k](g^jk) - c phi``.

    ``P`` comes from :func:`spectral.solve_pressure`; ``c`` defaults to the
    ``phi``-weighted mean of ``P``.
    """
    p = spectral.solve_pressure(u, d, grid)
    if c is None:
        c = float(np.sum(p * phi) / max(np.sum(phi), 1e-300))
    g = spectral.momentum_flux(u, spectral.gradient(d, grid))
    rhs = -c * phi
    for j in range(3):
        for k in range(3):
            rhs = rhs + spectral.riesz_pair(j, k, g[j, k] * phi, grid) + commutator(phi, g[j, k], j, k, grid)
    return float(np.max(np.abs((p - c) * phi - rhs)))


# --- Morrey norms ---------------------------------------------------------------


@dataclass(frozen=True)
class MorreyParams:
    p: float
    lam: float
    radii: tuple
    center_stride: int = 2
    time_stride: int = 1
    method: str = "auto"

    def __post_init__(self):
        if not self.p >= 1:
            raise ValueError("Morrey exponent p must be >= 1")
        if not 0 <= self.lam <= 5:
            raise ValueError("Morrey index lambda must lie in [0, 5]")
        if not self.radii or any(r <= 0 for r in self.radii):
            raise ValueError("radii must be a nonempty list of positive numbers")
        object.__setattr__(self, "radii", tuple(float(r) for r in self.radii))


@dataclass(frozen=True)
class MorreyResult:
    value: float
    center_x: tuple
    center_t: float
    radius: float
    per_radius: dict = field(default_factory=dict)


def morrey_norm_detail(times, data, grid, params: MorreyParams) -> MorreyResult:
    """Sampled ``sup_{z, r} (r^(lam-5) int_{P_r(z) cap U} |v|^p)^(1/p)``.

    ``data`` has shape ``(T, N, N, N)`` or ``(T, c, N, N, N)``; ``U`` is the torus
    times the saved time window.  Cylinder tops run over the saved times.
    """
    times = np.asarray(times, dtype=float)
    data = np.asarray(data, dtype=float)
    if data.shape[0] != len(times):
        raise ValueError("data and times disagree in length")
    for r in params.radii:
        _check_radius(r, grid)
    dens = [magnitude(v) ** params.p for v in data]
    best = (-1.0, None, None, None)
    per_radius = {}
    for r in params.radii:
        sums = np.stack(
            [ball_integrals(f, grid, r, params.center_stride, params.method) for f in dens]
        )
        r_best = -1.0
        for it in range(0, len(times), params.time_stride):
            t0 = times[it]
            w = interval_weights(times, t0 - r * r, t0)
            if len(times) == 1:
                continue
            integ = np.tensordot(w, sums, axes=1) * r ** (params.lam - 5)
            val = float(np.max(integ))
            if val > r_best:
                r_best = val
            if val > best[0]:
                best = (val, _argmax_center(integ, grid, params.center_stride), float(t0), r)
        per_radius[r] = max(r_best, 0.0) ** (1.0 / params.p)
    val, cx, ct, rr = best
    return MorreyResult(max(val, 0.0) ** (1.0 / params.p), cx, ct, rr, per_radius)


def morrey_norm(times, data, grid, params: MorreyParams) -> float:
    return morrey_norm_detail(times, data, grid, params).value


# --- parabolic Riesz potential ---------------------------------------------------


def parabolic_distance(dx, dt):
    """``delta((x, t), (y, s)) = max(|x - y|, sqrt|t - s|)``."""
    return np.maximum(np.sqrt(np.sum(np.asarray(dx) ** 2, axis=0)), np.sqrt(np.abs(dt)))


def parabolic_riesz_potential(g, spacing: float, time_step: float, beta: float, max_pairs: float = 5e7):
    """``I_beta(g)(x, t) = sum_(y, s) |g(y, s)| delta^(beta - 5) h^3 tau`` on a space-time lattice.

    ``g`` has shape ``(T, n1, n2, n3)``.  The lattice is treated as a window of
    R^4 (no periodic images).  The singular self-cell is integrated exactly over
    the parabolic ball ``{delta < rho}`` of the cell's volume, assuming constant
    density: ``(40 pi / 3) rho^beta / beta``.
    """
    g = np.abs(np.asarray(g, dtype=float))
    if not 0 < beta <= 5:
        raise ValueError("beta must lie in (0, 5]")
    npts = g.size
    if float(npts) ** 2 > max_pairs:
        raise GridTooLarge(f"{npts} lattice points exceed the direct-summation cap")
    T, n1, n2, n3 = g.shape
    it, ix, iy, iz = np.meshgrid(np.arange(T), np.arange(n1), np.arange(n2), np.arange(n3), indexing="ij")
    t = (it * time_step).ravel()
    x = np.stack([ix.ravel(), iy.ravel(), iz.ravel()]) * spacing
    vals = g.ravel()
    cell = spacing**3 * time_step
    rho = (3.0 * cell / (8.0 * np.pi)) ** 0.2
    self_weight = (40.0 * np.pi / 3.0) * rho**beta / beta

    src = np.flatnonzero(vals)
    out = np.empty(npts)
    chunk = max(1, int(2e6 // max(len(src), 1)))
    for start in range(0, npts, chunk):
        sl = slice(start, min(start + chunk, npts))
        dx = x[:, sl, None] - x[:, None, src]
        dist = parabolic_distance(dx, t[sl, None] - t[None, src])
        with np.errstate(divide="ignore"):
            kern = np.where(dist > 0, dist ** (beta - 5.0), 0.0)
        out[sl] = cell * kern @ vals[src]
    out += self_weight * vals
    return out.reshape(g.shape)


# --- blow-up monitor ------------------------------------------------------------


@dataclass(frozen=True)
class MonitorEvent:
    kind: str
    time: float
    value: float
    center: tuple
    threshold: float

    def as_dict(self):
        return {
            "kind": self.kind,
            "time": self.time,
            "value": self.value,
            "center": list(self.center),
            "threshold": self.threshold,
        }


class BlowupMonitor:
    """Flags the first save where ``|||(u, grad d)|||_{L^3_r} > eps0``."""

    def __init__(self, radius: float, eps0: float, center_stride: int = 2, method: str = "auto"):
        self.params = UlocParams(radius=radius, center_stride=center_stride, method=method)
        self.eps0 = float(eps0)

    def observe(self, state) -> Optional[MonitorEvent]:
        value, center = uloc_norm_detail(l3_density(state), state.grid, self.params, density=True)
        if value > self.eps0:
            return MonitorEvent("blowup_criterion", float(state.time), value, center, self.eps0)
        return None


def blowup_monitor(states: Sequence, radius: float, eps0: float, center_stride: int = 2):
    """First exceedance over a stream of states, or ``None``."""
    mon = BlowupMonitor(radius, eps0, center_stride)
    for s in states:
        ev = mon.observe(s)
        if ev is not None:
            return ev
    return None


# --- decay fitting --------------------------------------------------------------


@dataclass(frozen=True)
class DecayFit:
    """Least-squares power law ``C t^exponent`` for the order-``m`` sup norms.

    ``rms_residual`` is in natural-log units; ``exp_rms_residual`` is the same
    for an exponential model ``C e^(-a t)``.  ``power_law_ok`` is false when the
    power law misfits or the exponential explains the data far better.
    """

    order: int
    exponent: float
    prefactor: float
    rms_residual: float
    exp_rms_residual: float
    exp_rate: float
    power_law_ok: bool
    t_min: float
    t_max: float
    n_points: int

    def as_dict(self):
        return dict(self.__dict__)


def decay_fit(traj, m: int, t_min: Optional[float] = None, tolerance: float = 0.02) -> DecayFit:
    """Fit ``||grad^m u||_inf + ||grad^(m+1) d||_inf`` against ``C t^exponent``.

    Uses ledger entries with ``t >= t_min`` (default: first positive time);
    requires at least one decade of time.
    """
    ledger = traj.ledger
    t = ledger.times
    if not ledger.entries or m >= len(ledger.entries[0].grad_sup_norms):
        raise ValueError(f"ledger carries no sup norms of order {m}")
    y = np.array([e.grad_sup_norms[m] for e in ledger.entries])
    lo = t_min if t_min is not None else (t[t > 0].min() if np.any(t > 0) else np.inf)
    sel = (t >= lo) & (t > 0) & (y > 0)
    if sel.sum() < 3 or t[sel].max() < 10 * t[sel].min():
        raise InsufficientTimeSpan("decay fit needs at least one decade of positive times")
    lt, ly = np.log(t[sel]), np.log(y[sel])
    A = np.stack([lt, np.ones_like(lt)], axis=1)
    coef, *_ = np.linalg.lstsq(A, ly, rcond=None)
    rms = float(np.sqrt(np.mean((A @ coef - ly) ** 2)))
    B = np.stack([t[sel], np.ones_like(lt)], axis=1)
    ecoef, *_ = np.linalg.lstsq(B, ly, rcond=None)
    erms = float(np.sqrt(np.mean((B @ ecoef - ly) ** 2)))
    ok = rms <= tolerance and not (erms < 0.5 * rms)
    return DecayFit(
        order=m,
        exponent=float(coef[0]),
        prefactor=float(np.exp(coef[1])),
        rms_residual=rms,
        exp_rms_residual=erms,
        exp_rate=float(-ecoef[0]),
        power_law_ok=bool(ok),
        t_min=float(t[sel].min()),
        t_max=float(t[sel].max()),
        n_points=int(sel.sum()),
    )
