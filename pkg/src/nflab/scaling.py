"""Parabolic rescaling ``(u, P, d)(x, t) -> (lam u, lam^2 P, d)(lam x, lam^2 t)``.

The rescaled fields live on a torus of side ``L / lam``.  Keeping the number of
grid points fixed maps grid nodes onto grid nodes, so ``exact_integer``
rescaling reuses the sample arrays and only multiplies by powers of ``lam``.
``spectral_resample`` additionally Fourier-interpolates onto another grid size.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import analysis, spectral
from .dynamics import SchemeConfig, Trajectory, rhs_velocity
from .errors import IncompatibleLambda
from .grid import EnergyLedger, FlowState, PeriodicGrid

REGRIDS = ("exact_integer", "spectral_resample")


@dataclass(frozen=True)
class RescaleSpec:
    """Scale factor and regridding mode.

    ``target_n`` only applies to ``spectral_resample`` and defaults to the
    source grid size.
    """

    lam: float
    regrid: str = "exact_integer"
    target_n: Optional[int] = None

    def __post_init__(self):
        if not (math.isfinite(self.lam) and self.lam > 0):
            raise IncompatibleLambda(f"lambda must be positive and finite, got {self.lam}")
        if self.regrid not in REGRIDS:
            raise ValueError(f"regrid must be one of {REGRIDS}")

    @property
    def inverse(self) -> "RescaleSpec":
        return RescaleSpec(1.0 / self.lam, self.regrid, self.target_n)

    @property
    def approximate(self) -> bool:
        return self.regrid == "spectral_resample" and self.target_n is not None


def _is_integer(x, tol=1e-12):
    return abs(x - round(x)) <= tol * max(1.0, abs(x))


def check_lambda(spec: RescaleSpec):
    if spec.regrid == "exact_integer" and not (_is_integer(spec.lam) or _is_integer(1.0 / spec.lam)):
        raise IncompatibleLambda(
            f"exact_integer rescaling needs lambda or 1/lambda integral, got {spec.lam}"
        )


def fourier_resample(f, n_target: int) -> np.ndarray:
    """Band-limited interpolation of a periodic field onto ``n_target**3`` points.

    Modes are truncated or zero-padded; the Nyquist plane of the coarser grid is
    dropped so the result stays real and symmetric.
    """
    f = np.asarray(f, dtype=float)
    n = f.shape[-1]
    if n_target == n:
        return f.copy()
    fh = np.fft.fftn(f, axes=(-3, -2, -1))
    m = min(n, n_target) // 2  # keep |k| < m
    keep = np.r_[0:m, -m + 1 : 0]
    out = np.zeros(f.shape[:-3] + (n_target,) * 3, dtype=complex)
    src = np.ix_(keep % n, keep % n, keep % n)
    dst = np.ix_(keep % n_target, keep % n_target, keep % n_target)
    out[(Ellipsis,) + dst] = fh[(Ellipsis,) + src]
    scale = (n_target / n) ** 3
    return np.real(np.fft.ifftn(out, axes=(-3, -2, -1))) * scale


def rescale_state(state: FlowState, spec: RescaleSpec) -> FlowState:
    """The ``lam``-rescaled state at time ``t / lam^2`` on a torus of side ``L / lam``."""
    check_lambda(spec)
    lam = spec.lam
    if lam == 1.0 and not spec.approximate:
        return state
    grid = state.grid
    u = lam * state.velocity
    p = lam**2 * state.pressure
    d = state.director
    n = grid.n
    if spec.regrid == "spectral_resample" and spec.target_n not in (None, n):
        n = int(spec.target_n)
        u, p, d = (fourier_resample(f, n) for f in (u, p, d))
    new_grid = PeriodicGrid(n, grid.length / lam)
    return FlowState(new_grid, u, d, p, state.time / lam**2)


def rescale_trajectory(traj: Trajectory, spec: RescaleSpec, ledger_params=None) -> Trajectory:
    """Rescale every stored state; the ledger is recomputed on the new grid."""
    states = tuple(rescale_state(s, spec) for s in traj.states)
    ledger = EnergyLedger()
    for s in states:
        ledger.append(analysis.ledger_entry(s, ledger_params))
    cfg = traj.config
    new_cfg = SchemeConfig(**{**cfg.__dict__, "dt": cfg.dt / spec.lam**2})
    return Trajectory(states, ledger, new_cfg, (), traj.max_cfl)


def rescale_cylinder(cyl: analysis.Cylinder, lam: float) -> analysis.Cylinder:
    return analysis.Cylinder(
        tuple(c / lam for c in cyl.center_x), cyl.center_t / lam**2, cyl.radius / lam
    )


def rhs_consistency_residual(traj: Trajectory) -> float:
    """Relative mismatch between stored velocity increments and the right-hand side.

    For consecutive stored states, ``(u_1 - u_0)`` is compared with the
    trapezoid integral of ``rhs_velocity`` over the interval.  Invariant under
    parabolic rescaling in the continuum; ``O(dt^2)`` for smooth runs.
    """
    states = traj.states
    if len(states) < 2:
        return 0.0
    cfg = traj.config
    num = den = 0.0
    prev = rhs_velocity(states[0], cfg)
    for a, b in zip(states[:-1], states[1:]):
        cur = rhs_velocity(b, cfg)
        dt = b.time - a.time
        gap = (b.velocity - a.velocity) - 0.5 * dt * (prev + cur)
        num = max(num, float(np.max(np.abs(gap))))
        den = max(den, float(np.max(np.abs(b.velocity - a.velocity))))
        prev = cur
    return num / den if den > 0 else 0.0


def _rel_dev(before, after):
    scale = max(abs(before), abs(after))
    return 0.0 if scale == 0 else abs(after - before) / scale


@dataclass(frozen=True)
class InvarianceReport:
    lam: float
    regrid: str
    approximate: bool
    grid_before: tuple
    grid_after: tuple
    quantities: tuple

    def max_deviation(self, prefix: str = "") -> float:
        devs = [q["rel_dev"] for q in self.quantities if q["name"].startswith(prefix)]
        return max(devs, default=0.0)

    def as_dict(self):
        return {
            "lambda": self.lam,
            "regrid": self.regrid,
            "approximate": self.approximate,
            "grid_before": {"N": self.grid_before[0], "L": self.grid_before[1]},
            "grid_after": {"N": self.grid_after[0], "L": self.grid_after[1]},
            "quantities": list(self.quantities),
        }


def invariance_report(
    traj: Trajectory,
    spec: RescaleSpec,
    cylinders: Sequence[analysis.Cylinder] = (),
    uloc_radius: Optional[float] = None,
    center_stride: int = 2,
) -> InvarianceReport:
    """Scale-invariant quantities before and after rescaling.

    Compares, on the first and last stored states, ``E_3``, ``||u||_{L^3}``,
    ``|||(u, grad d)|||`` at radius ``R`` versus ``R / lam``, the
    covariance ``rhs(u^lam) = lam^3 rhs(u)``, each cylinder's three brackets
    versus those on the rescaled cylinder, and the time-stepping consistency
    residual of the stored trajectory.
    """
    lam = spec.lam
    scaled = rescale_trajectory(traj, spec)
    grid, new_grid = traj.states[0].grid, scaled.states[0].grid
    R = uloc_radius if uloc_radius is not None else 0.25 * grid.length
    rows = []

    def add(name, before, after):
        rows.append({"name": name, "before": float(before), "after": float(after), "rel_dev": _rel_dev(before, after)})

    picks = {"t0": (traj.states[0], scaled.states[0]), "t1": (traj.states[-1], scaled.states[-1])}
    if len(traj.states) == 1:
        picks.pop("t1")
    p0 = analysis.UlocParams(R, center_stride, method="direct")
    p1 = analysis.UlocParams(R / lam, center_stride, method="direct")
    for tag, (a, b) in picks.items():
        add(f"E3@{tag}", analysis.energy_l3(a), analysis.energy_l3(b))
        add(f"L3_u@{tag}", analysis.l3_norm(a.velocity, grid), analysis.l3_norm(b.velocity, new_grid))
        add(f"uloc3@{tag}", analysis.uloc_pair_norm(a, p0), analysis.uloc_pair_norm(b, p1))
        ra = lam**3 * rhs_velocity(a, traj.config)
        rb = rhs_velocity(b, scaled.config)
        add(f"rhs_sup@{tag}", np.max(np.abs(ra)), np.max(np.abs(rb)))
        gap = float(np.max(np.abs(ra - rb)))
        ref = float(np.max(np.abs(ra)))
        rows.append({"name": f"rhs_covariance@{tag}", "before": 0.0, "after": gap, "rel_dev": gap / ref if ref else 0.0})

    for i, cyl in enumerate(cylinders):
        qa = analysis.cylinder_quantities(traj, cyl).as_dict()
        qb = analysis.cylinder_quantities(scaled, rescale_cylinder(cyl, lam)).as_dict()
        for key in ("q_u", "q_P", "q_gradd"):
            add(f"cyl{i}.{key}", qa[key], qb[key])

    fa, fb = rhs_consistency_residual(traj), rhs_consistency_residual(scaled)
    rows.append({"name": "fd_residual", "before": fa, "after": fb, "rel_dev": _rel_dev(fa, fb)})
    return InvarianceReport(
        lam, spec.regrid, spec.approximate, (grid.n, grid.length), (new_grid.n, new_grid.length), tuple(rows)
    )
