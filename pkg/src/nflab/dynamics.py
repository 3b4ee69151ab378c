"""Right-hand sides and time integration of the liquid crystal flow system.

The system advanced here is

    u_t + div(u ⊗ u) - nu lap u + grad P = -lam div(grad d ⊙ grad d),   div u = 0,
    d_t + u . grad d = gamma (lap d + |grad d|^2 d),                      |d| = 1,

or, with ``constraint='ginzburg_landau'``, the director equation with the
penalty ``(1 - |d|^2) d / eps^2`` in place of ``|grad d|^2 d``.

Diffusion is integrated exactly through the heat multiplier (integrating
factor); the remaining terms are explicit (Euler or Heun/RK2 in the
transformed variables).  After every stage the velocity is Leray-projected and,
for the constrained model, the director is renormalized pointwise.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import spectral
from .errors import BlowUpDetected, InvariantViolation
from .grid import EnergyLedger, FlowState, normalize_director

log = logging.getLogger(__name__)

SCHEMES = ("imex_euler", "imex_rk2")
CONSTRAINTS = ("renormalize", "ginzburg_landau")
MODELS = ("full", "navier_stokes_only", "harmonic_map_only")


@dataclass(frozen=True)
class SchemeConfig:
    dt: float
    scheme: str = "imex_rk2"
    constraint: str = "renormalize"
    gl_epsilon: Optional[float] = None
    model: str = "full"
    overflow_guard: float = 1e6
    nu: float = 1.0
    lam: float = 1.0
    gamma: float = 1.0

    def __post_init__(self):
        if not (isinstance(self.dt, (int, float)) and self.dt > 0 and math.isfinite(self.dt)):
            raise ValueError(f"dt must be a positive finite number, got {self.dt!r}")
        if self.scheme not in SCHEMES:
            raise ValueError(f"scheme must be one of {SCHEMES}, got {self.scheme!r}")
        if self.constraint not in CONSTRAINTS:
            raise ValueError(f"constraint must be one of {CONSTRAINTS}, got {self.constraint!r}")
        if self.model not in MODELS:
            raise ValueError(f"model must be one of {MODELS}, got {self.model!r}")
        if (self.constraint == "ginzburg_landau") != (self.gl_epsilon is not None):
            raise ValueError("gl_epsilon is required exactly when constraint='ginzburg_landau'")
        if self.gl_epsilon is not None and not self.gl_epsilon > 0:
            raise ValueError("gl_epsilon must be positive")
        for name in ("nu", "lam", "gamma", "overflow_guard"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")

    @property
    def unit_director(self) -> bool:
        return self.constraint == "renormalize"


@dataclass(frozen=True)
class Trajectory:
    """Saved states of one run with their ledger and monitor events."""

    states: tuple
    ledger: EnergyLedger
    config: SchemeConfig
    events: tuple = ()
    max_cfl: float = 0.0

    @property
    def times(self) -> np.ndarray:
        return np.array([s.time for s in self.states])

    @property
    def grid(self):
        return self.states[0].grid

    def __post_init__(self):
        t = self.times
        if len(t) and np.any(np.diff(t) <= 0):
            raise InvariantViolation("trajectory states must be strictly increasing in time")


def cfl_number(state: FlowState, dt: float) -> float:
    """Advisory advective CFL number ``max|u| dt / h``."""
    umax = float(np.max(np.sqrt(np.sum(state.velocity**2, axis=0))))
    return umax * dt / state.grid.spacing


# --- right-hand sides -------------------------------------------------------


def _advect(u, grad_f):
    """``(u . grad) f`` for ``grad_f[i, ...] = d_i f``."""
    return np.einsum("i...,i...->...", u, grad_f)


def rhs_velocity(state: FlowState, cfg: Optional[SchemeConfig] = None) -> np.ndarray:
    """Full velocity tendency ``-div(u⊗u) + nu lap u - grad P - lam div(grad d ⊙ grad d)``.

    Uses ``state.pressure`` as given.
    """
    cfg = cfg or SchemeConfig(dt=1.0)
    grid, u = state.grid, state.velocity
    conv = spectral.divergence(np.einsum("j...,k...->jk...", u, u), grid)
    out = -conv + cfg.nu * spectral.laplacian(u, grid) - spectral.gradient(state.pressure, grid)
    if cfg.model != "navier_stokes_only":
        _, div_stress = spectral.ericksen_stress(state.director, grid)
        out -= cfg.lam * div_stress
    return out


def rhs_director(state: FlowState, cfg: Optional[SchemeConfig] = None) -> np.ndarray:
    """``-u . grad d + gamma (lap d + |grad d|^2 d)``."""
    cfg = cfg or SchemeConfig(dt=1.0)
    grid, d = state.grid, state.director
    gd = spectral.gradient(d, grid)
    energy = np.sum(gd * gd, axis=(0, 1))
    return -_advect(state.velocity, gd) + cfg.gamma * (spectral.laplacian(d, grid) + energy * d)


def rhs_director_gl(state: FlowState, eps: float, cfg: Optional[SchemeConfig] = None) -> np.ndarray:
    """``-u . grad d + gamma (lap d + (1 - |d|^2) d / eps^2)``; ``d`` need not be unit."""
    cfg = cfg or SchemeConfig(dt=1.0)
    grid, d = state.grid, state.director
    gd = spectral.gradient(d, grid)
    penalty = (1.0 - np.sum(d * d, axis=0)) * d / eps**2
    return -_advect(state.velocity, gd) + cfg.gamma * (spectral.laplacian(d, grid) + penalty)


# --- stepping ---------------------------------------------------------------


def _nonlinear_hat(u, d, grid, cfg):
    """Dealiased explicit tendencies ``(N_u, N_d)`` in spectral space.

    ``N_u`` already includes the pressure gradient, so it is divergence free.
    """
    tab = spectral.wavevectors(grid.n, grid.length)
    nu_hat = nd_hat = None

    if cfg.model != "harmonic_map_only":
        flux = np.einsum("j...,k...->jk...", u, u)
        if cfg.model == "full":
            flux = flux + cfg.lam * spectral.stress_tensor(spectral.gradient(d, grid))
        gh = spectral.to_spectral(flux) * tab.dealias
        ph = spectral.pressure_from_flux_hat(gh, tab)
        nu_hat = np.stack(
            [-sum(1j * tab.kd[j] * gh[j, k] for j in range(3)) - 1j * tab.kd[k] * ph for k in range(3)]
        )

    if cfg.model != "navier_stokes_only":
        gd = spectral.gradient(d, grid)
        if cfg.constraint == "renormalize":
            reaction = np.sum(gd * gd, axis=(0, 1)) * d
        else:
            reaction = (1.0 - np.sum(d * d, axis=0)) * d / cfg.gl_epsilon**2
        nd = cfg.gamma * reaction
        if cfg.model == "full":
            nd = nd - _advect(u, gd)
        nd_hat = spectral.to_spectral(nd) * tab.dealias
        if cfg.constraint == "renormalize":
            # Make the full tendency lap d + N_d tangent to the sphere pointwise;
            # otherwise renormalizing after each stage costs an order in dt.
            lap = spectral.to_physical(-tab.k2 * spectral.to_spectral(d), grid)
            total = lap + spectral.to_physical(nd_hat, grid)
            normal = np.sum(total * d, axis=0) * d
            nd_hat = nd_hat - spectral.to_spectral(normal)

    return nu_hat, nd_hat


def _finish(uh, dh, state, grid, cfg, tab):
    """Return physical (u, d) after projection and renormalization."""
    if uh is None:
        u = np.zeros_like(state.velocity)
    else:
        u = spectral.to_physical(spectral._leray_hat(uh, tab), grid)
    if dh is None:
        d = state.director
    else:
        d = spectral.to_physical(dh, grid)
        if cfg.constraint == "renormalize":
            d = normalize_director(d)
    return u, d


def _guard(u, d, time, cfg):
    if not (np.all(np.isfinite(u)) and np.all(np.isfinite(d))):
        raise BlowUpDetected(f"non-finite values at t={time:.6g}", time=time)
    umax = float(np.max(np.abs(u)))
    if umax > cfg.overflow_guard:
        raise BlowUpDetected(
            f"max|u| = {umax:.3e} exceeds overflow guard {cfg.overflow_guard:.1e} at t={time:.6g}",
            time=time,
        )


def _pressure(u, d, grid, cfg):
    if cfg.model == "harmonic_map_only":
        return np.zeros(grid.shape)
    tab = spectral.wavevectors(grid.n, grid.length)
    flux = np.einsum("j...,k...->jk...", u, u)
    if cfg.model == "full":
        flux = flux + cfg.lam * spectral.stress_tensor(spectral.gradient(d, grid))
    gh = spectral.to_spectral(flux) * tab.dealias
    return spectral.to_physical(spectral.pressure_from_flux_hat(gh, tab), grid)


def prepare_state(state: FlowState, cfg: SchemeConfig) -> FlowState:
    """Apply the model reduction to an initial state and make the pressure consistent."""
    u, d = state.velocity, state.director
    if cfg.model == "harmonic_map_only":
        u = np.zeros_like(u)
    return state.replace(velocity=u, pressure=_pressure(u, d, state.grid, cfg))


def step(state: FlowState, cfg: SchemeConfig, dt: Optional[float] = None) -> FlowState:
    """Advance ``state`` by one time step (``cfg.dt`` unless ``dt`` is given)."""
    dt = cfg.dt if dt is None else dt
    grid = state.grid
    tab = spectral.wavevectors(grid.n, grid.length)
    t_new = state.time + dt

    u0, d0 = state.velocity, state.director
    if cfg.model == "harmonic_map_only":
        u0 = np.zeros_like(u0)
    eu = np.exp(-cfg.nu * tab.k2 * dt)
    ed = np.exp(-cfg.gamma * tab.k2 * dt)

    uh0 = None if cfg.model == "harmonic_map_only" else spectral.to_spectral(u0)
    dh0 = None if cfg.model == "navier_stokes_only" else spectral.to_spectral(d0)
    nu0, nd0 = _nonlinear_hat(u0, d0, grid, cfg)

    def advance(base_hat, decay, n0, n1=None):
        if base_hat is None:
            return None
        if n1 is None:
            return decay * (base_hat + dt * n0)
        return decay * base_hat + 0.5 * dt * (decay * n0 + n1)

    uh = advance(uh0, eu, nu0)
    dh = advance(dh0, ed, nd0)
    u1, d1 = _finish(uh, dh, state, grid, cfg, tab)

    if cfg.scheme == "imex_rk2":
        _guard(u1, d1, t_new, cfg)
        nu1, nd1 = _nonlinear_hat(u1, d1, grid, cfg)
        uh = advance(uh0, eu, nu0, nu1)
        dh = advance(dh0, ed, nd0, nd1)
        u1, d1 = _finish(uh, dh, state, grid, cfg, tab)

    _guard(u1, d1, t_new, cfg)
    return FlowState(grid, u1, d1, _pressure(u1, d1, grid, cfg), t_new)


def simulate(
    initial: FlowState,
    cfg: SchemeConfig,
    t_end: float,
    save_every: int = 1,
    monitors: Sequence = (),
    keep_states: int = 1,
    ledger_params=None,
) -> Trajectory:
    """Integrate from ``initial`` to ``t_end``, saving every ``save_every`` steps.

    A ledger entry is written at every save; full states are retained at every
    ``keep_states``-th save (``0`` keeps only the first and last).  Monitors are
    objects with an ``observe(state)`` method returning an event or ``None``;
    each monitor contributes at most its first event.

    Raises :class:`BlowUpDetected` with ``time`` and the partial trajectory
    attached.
    """
    from . import analysis  # circular: analysis consumes Trajectory objects

    if save_every < 1:
        raise ValueError("save_every must be a positive integer")
    span = t_end - initial.time
    if span < 0:
        raise ValueError("t_end must not precede the initial time")
    n_steps = max(0, math.ceil(span / cfg.dt - 1e-9))

    state = prepare_state(initial, cfg)
    ledger = EnergyLedger()
    states = [state]
    events = []
    fired = set()
    max_cfl = cfl_number(state, cfg.dt)

    def record(s):
        ledger.append(analysis.ledger_entry(s, ledger_params))
        for i, mon in enumerate(monitors):
            if i in fired:
                continue
            ev = mon.observe(s)
            if ev is not None:
                fired.add(i)
                events.append(ev)

    record(state)
    saves = 0
    for k in range(1, n_steps + 1):
        target = initial.time + k * cfg.dt if k < n_steps else t_end
        try:
            state = step(state, cfg, dt=target - state.time)
        except BlowUpDetected as exc:
            exc.trajectory = Trajectory(tuple(states), ledger, cfg, tuple(events), max_cfl)
            raise
        max_cfl = max(max_cfl, cfl_number(state, cfg.dt))
        if k % save_every == 0 or k == n_steps:
            saves += 1
            record(state)
            if keep_states and (saves % keep_states == 0 or k == n_steps):
                states.append(state)
            elif not keep_states and k == n_steps:
                states.append(state)

    if max_cfl > 0.5:
        log.warning("advective CFL number reached %.3f (advisory limit 0.5)", max_cfl)
    return Trajectory(tuple(states), ledger, cfg, tuple(events), max_cfl)
