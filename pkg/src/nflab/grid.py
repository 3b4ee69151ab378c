"""Periodic grid, field containers, quadrature and initial-data construction.

Fields are plain numpy arrays on a :class:`PeriodicGrid`: scalars have shape
``(N, N, N)``, velocity and director fields ``(3, N, N, N)``.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional

import numpy as np

from . import spectral
from .errors import InvariantViolation, UnknownPreset, ZeroDirector

UNIT_TOLERANCE = 1e-12
DIV_TOLERANCE = 1e-10
DEGENERATE_THRESHOLD = 1e-8


@dataclass(frozen=True)
class PeriodicGrid:
    """Uniform ``n**3`` discretization of the torus ``[0, length)^3``."""

    n: int
    length: float = 2.0 * np.pi

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 4 or self.n % 2:
            raise ValueError(f"grid size must be an even integer >= 4, got {self.n}")
        if not self.length > 0:
            raise ValueError(f"side length must be positive, got {self.length}")
        object.__setattr__(self, "n", int(self.n))
        object.__setattr__(self, "length", float(self.length))

    @property
    def spacing(self) -> float:
        return self.length / self.n

    @property
    def cell_volume(self) -> float:
        return self.spacing**3

    @property
    def shape(self):
        return (self.n, self.n, self.n)

    @cached_property
    def axis(self) -> np.ndarray:
        return np.arange(self.n) * self.spacing

    @cached_property
    def coords(self) -> np.ndarray:
        """Grid point coordinates, shape ``(3, N, N, N)``."""
        c = np.stack(np.meshgrid(self.axis, self.axis, self.axis, indexing="ij"))
        c.setflags(write=False)
        return c

    def displacement(self, center) -> np.ndarray:
        """Minimum-image displacement ``x - center`` on the torus, ``(3, N, N, N)``."""
        c = np.asarray(center, dtype=float).reshape(3, 1, 1, 1)
        half = 0.5 * self.length
        return np.mod(self.coords - c + half, self.length) - half

    def distance(self, center) -> np.ndarray:
        return np.sqrt(np.sum(self.displacement(center) ** 2, axis=0))

    def zeros(self, components: Optional[int] = None) -> np.ndarray:
        shape = self.shape if components is None else (components,) + self.shape
        return np.zeros(shape)


def integrate(values, grid: PeriodicGrid) -> float:
    """Midpoint (= trapezoidal on the torus) quadrature over the whole box."""
    return float(grid.cell_volume * np.sum(values))


def mean(values, grid: PeriodicGrid) -> float:
    return float(np.mean(values))


@dataclass(frozen=True)
class FlowState:
    """Velocity, director, pressure and time on one grid."""

    grid: PeriodicGrid
    velocity: np.ndarray
    director: np.ndarray
    pressure: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        shp = self.grid.shape
        if self.velocity.shape != (3,) + shp or self.director.shape != (3,) + shp:
            raise InvariantViolation("velocity and director must have shape (3, N, N, N)")
        if self.pressure.shape != shp:
            raise InvariantViolation("pressure must have shape (N, N, N)")
        if self.time < 0:
            raise InvariantViolation(f"time must be nonnegative, got {self.time}")

    def replace(self, **changes) -> "FlowState":
        return dataclasses.replace(self, **changes)


def director_defect(d) -> float:
    """``max | |d(x)| - 1 |``."""
    return float(np.max(np.abs(np.sqrt(np.sum(d * d, axis=0)) - 1.0)))


def divergence_defect(u, grid) -> float:
    return float(np.max(np.abs(spectral.divergence(u, grid))))


def check_state(
    state: FlowState,
    div_tolerance: float = DIV_TOLERANCE,
    unit_tolerance: float = UNIT_TOLERANCE,
    unit_director: bool = True,
) -> FlowState:
    """Raise :class:`InvariantViolation` unless ``state`` satisfies the flow invariants.

    ``unit_director=False`` skips the sphere constraint, which Ginzburg-Landau
    runs do not maintain.
    """
    for name in ("velocity", "director", "pressure"):
        if not np.all(np.isfinite(getattr(state, name))):
            raise InvariantViolation(f"{name} contains non-finite values")
    div = divergence_defect(state.velocity, state.grid)
    if div >= div_tolerance:
        raise InvariantViolation(f"max |div u| = {div:.3e} exceeds {div_tolerance:.1e}")
    if unit_director:
        defect = director_defect(state.director)
        if defect >= unit_tolerance:
            raise InvariantViolation(f"max ||d|-1| = {defect:.3e} exceeds {unit_tolerance:.1e}")
    p_mean = abs(float(np.mean(state.pressure)))
    scale = max(1.0, float(np.max(np.abs(state.pressure))))
    if p_mean > 1e-12 * scale:
        raise InvariantViolation(f"pressure mean {p_mean:.3e} is not zero")
    return state


def normalize_director(d, threshold: float = DEGENERATE_THRESHOLD) -> np.ndarray:
    """Project a 3-component field pointwise onto the unit sphere."""
    d = np.asarray(d, dtype=float)
    norm = np.sqrt(np.sum(d * d, axis=0))
    low = float(np.min(norm))
    if low <= threshold:
        raise ZeroDirector(f"director magnitude {low:.3e} at or below {threshold:.1e}")
    return d / norm


def mollify(f, grid, width: float) -> np.ndarray:
    """Gaussian mollification, multiplier ``exp(-width^2 |k|^2 / 2)``."""
    if width < 0:
        raise ValueError("mollifier width must be nonnegative")
    if width == 0:
        return np.array(f, dtype=float, copy=True)
    tab = spectral.wavevectors(grid.n, grid.length)
    return spectral.to_physical(np.exp(-0.5 * width**2 * tab.k2) * spectral.to_spectral(f), grid)


def build_smooth_initial_data(u_raw, d_raw, grid, mollifier_width: float):
    """Mollify, Leray-project the velocity and renormalize the director.

    Returns ``(velocity, director)``.  The spatial cutoff used on unbounded
    domains is unnecessary on the torus and is not applied.
    """
    u = spectral.leray_project(mollify(u_raw, grid, mollifier_width), grid)
    d = normalize_director(mollify(d_raw, grid, mollifier_width))
    return u, d


def _bump_exp(x):
    out = np.zeros_like(x)
    pos = x > 0
    out[pos] = np.exp(-1.0 / x[pos])
    return out


def smooth_step(s):
    """C-infinity transition: 0 for ``s <= 0``, 1 for ``s >= 1``."""
    s = np.asarray(s, dtype=float)
    a, b = _bump_exp(s), _bump_exp(1.0 - s)
    return a / (a + b)


def smooth_step_derivative(s):
    s = np.asarray(s, dtype=float)
    a, b = _bump_exp(s), _bump_exp(1.0 - s)
    da = np.zeros_like(s)
    db = np.zeros_like(s)
    pa, pb = s > 0, s < 1
    da[pa] = a[pa] / s[pa] ** 2
    db[pb] = -b[pb] / (1.0 - s[pb]) ** 2
    return (da * b - a * db) / (a + b) ** 2


def cutoff_profile(grid, center, inner: float, outer: float) -> np.ndarray:
    """Radial cutoff: 1 on ``B_inner(center)``, 0 outside ``B_outer``, smooth between."""
    if not 0 <= inner < outer:
        raise ValueError("need 0 <= inner < outer")
    r = grid.distance(center)
    return smooth_step((outer - r) / (outer - inner))


def gaussian_bump(grid, center, width: float) -> np.ndarray:
    """Periodic Gaussian ``exp(sum_i (cos(kappa (x_i - c_i)) - 1) / (kappa width)^2)``.

    ``kappa = 2 pi / L``.  Agrees with ``exp(-|x - c|^2 / (2 width^2))`` to leading
    order near the center but is smooth across the box boundary.
    """
    kappa = 2 * np.pi / grid.length
    c = np.asarray(center, dtype=float).reshape(3, 1, 1, 1)
    phase = np.sum(np.cos(kappa * (grid.coords - c)) - 1.0, axis=0)
    return np.exp(phase / (kappa * width) ** 2)


def random_band_limited(grid, kmax: int, rng, components: Optional[int] = None) -> np.ndarray:
    """Random mean-zero real field with modes ``|n_i| <= kmax``, scaled to max-abs 1."""
    n = grid.n
    if not 1 <= kmax < n // 3:
        raise ValueError(f"kmax must lie in [1, {n // 3 - 1}] for N={n}")
    tab = spectral.wavevectors(n, grid.length)
    idx = [np.rint(k * grid.length / (2 * np.pi)) for k in tab.k]
    band = (np.abs(idx[0]) <= kmax) & (np.abs(idx[1]) <= kmax) & (np.abs(idx[2]) <= kmax)
    band = band & (tab.k2 > 0)
    count = 1 if components is None else components
    out = []
    for _ in range(count):
        coef = (rng.standard_normal(tab.shape) + 1j * rng.standard_normal(tab.shape)) * band
        f = spectral.to_physical(coef, grid)
        out.append(f / np.max(np.abs(f)))
    return out[0] if components is None else np.stack(out)


def _unit(v):
    v = np.asarray(v, dtype=float)
    norm = np.linalg.norm(v)
    if norm == 0:
        raise ValueError("far-field direction e0 must be nonzero")
    return v / norm


def _constant_director(grid, e0):
    return np.broadcast_to(_unit(e0).reshape(3, 1, 1, 1), (3,) + grid.shape).copy()


def taylor_green_velocity(grid, amplitude=1.0, time=0.0):
    """``A (sin x cos y, -cos x sin y, 0) exp(-2t)``, scaled to the box side."""
    x, y, _ = grid.coords * (2 * np.pi / grid.length)
    scale = 2 * np.pi / grid.length
    decay = np.exp(-2.0 * scale**2 * time)
    u = np.zeros((3,) + grid.shape)
    u[0] = amplitude * np.sin(x) * np.cos(y) * decay
    u[1] = -amplitude * np.cos(x) * np.sin(y) * decay
    return u


PRESETS = ("taylor_green", "constant_director_ns", "small_director_perturbation", "random_band_limited")


def preset_field(name: str, grid: PeriodicGrid, **params) -> FlowState:
    """Named initial states.

    Every preset accepts ``amplitude`` (the size of its leading perturbation),
    ``e0`` (constant far-field director), ``seed`` and ``kmax`` where relevant.

    * ``taylor_green``: Taylor-Green velocity of amplitude ``A``, ``d = e0``.
    * ``constant_director_ns``: random band-limited divergence-free velocity,
      ``d = e0`` (the Navier-Stokes reduction).
    * ``small_director_perturbation``: ``u = 0``,
      ``d = normalize(e0 + amplitude * band-limited perturbation)``.
    * ``random_band_limited``: random velocity of size ``amplitude`` and a
      director perturbation of size ``director_amplitude``.
    """
    e0 = params.get("e0", (0.0, 0.0, 1.0))
    seed = params.get("seed", 0)
    kmax = params.get("kmax", 2)
    rng = np.random.default_rng(seed)

    if name == "taylor_green":
        u = taylor_green_velocity(grid, params.get("amplitude", 1.0))
        d = _constant_director(grid, e0)
    elif name == "constant_director_ns":
        u = spectral.leray_project(random_band_limited(grid, kmax, rng, 3), grid)
        u *= params.get("amplitude", 1.0) / max(np.max(np.abs(u)), 1e-300)
        d = _constant_director(grid, e0)
    elif name == "small_director_perturbation":
        u = grid.zeros(3)
        pert = random_band_limited(grid, kmax, rng, 3)
        d = normalize_director(_constant_director(grid, e0) + params.get("amplitude", 0.02) * pert)
    elif name == "random_band_limited":
        u = spectral.leray_project(random_band_limited(grid, kmax, rng, 3), grid)
        u *= params.get("amplitude", 0.1) / max(np.max(np.abs(u)), 1e-300)
        pert = random_band_limited(grid, kmax, rng, 3)
        d = normalize_director(_constant_director(grid, e0) + params.get("director_amplitude", 0.1) * pert)
    else:
        raise UnknownPreset(f"unknown preset {name!r}; expected one of {', '.join(PRESETS)}")

    p = spectral.solve_pressure(u, d, grid, dealiased=True)
    return FlowState(grid, u, d, p - np.mean(p), 0.0)


@dataclass(frozen=True)
class LedgerEntry:
    time: float
    E2: float
    E3: float
    dissipation: float
    uloc3: float
    grad_sup_norms: tuple


@dataclass
class EnergyLedger:
    """Time-ordered energy diagnostics; times must be strictly increasing."""

    entries: list = field(default_factory=list)

    def append(self, entry: LedgerEntry):
        if self.entries and not entry.time > self.entries[-1].time:
            raise InvariantViolation(
                f"ledger time {entry.time} does not follow {self.entries[-1].time}"
            )
        self.entries.append(entry)

    def __len__(self):
        return len(self.entries)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(e, name) for e in self.entries], dtype=float)

    @property
    def times(self) -> np.ndarray:
        return self.column("time")
