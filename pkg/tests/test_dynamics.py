import numpy as np
import pytest
from scipy.integrate import solve_ivp

from nflab import analysis, spectral
from nflab.dynamics import (
    SchemeConfig,
    Trajectory,
    cfl_number,
    rhs_director,
    rhs_director_gl,
    rhs_velocity,
    simulate,
    step,
)
from nflab.errors import BlowUpDetected, InvariantViolation
from nflab.grid import (
    EnergyLedger,
    FlowState,
    PeriodicGrid,
    check_state,
    director_defect,
    preset_field,
    taylor_green_velocity,
)


def constant_state(grid, d=(0.0, 0.0, 1.0), u=None):
    dd = np.broadcast_to(np.asarray(d, float).reshape(3, 1, 1, 1), (3,) + grid.shape).copy()
    uu = grid.zeros(3) if u is None else u
    return FlowState(grid, uu, dd, grid.zeros(), 0.0)


# --- configuration ---------------------------------------------------------------


@pytest.mark.parametrize(
    "kwargs",
    [
        {"dt": 0.0},
        {"dt": -1e-3},
        {"dt": float("nan")},
        {"dt": 1e-3, "scheme": "rk4"},
        {"dt": 1e-3, "model": "stokes"},
        {"dt": 1e-3, "constraint": "ginzburg_landau"},
        {"dt": 1e-3, "gl_epsilon": 0.1},
        {"dt": 1e-3, "constraint": "ginzburg_landau", "gl_epsilon": -0.1},
        {"dt": 1e-3, "nu": 0.0},
    ],
)
def test_scheme_config_validation(kwargs):
    with pytest.raises(ValueError):
        SchemeConfig(**kwargs)


def test_scheme_config_defaults():
    cfg = SchemeConfig(dt=1e-3)
    assert (cfg.nu, cfg.lam, cfg.gamma) == (1.0, 1.0, 1.0)
    assert cfg.unit_director and cfg.overflow_guard == 1e6


# --- right-hand sides ------------------------------------------------------------


def test_equilibrium_has_zero_tendencies(grid16):
    s = constant_state(grid16)
    assert np.max(np.abs(rhs_velocity(s))) < 1e-14
    assert np.max(np.abs(rhs_director(s))) < 1e-14


def test_taylor_green_tendency_is_viscous_decay(grid32):
    s = preset_field("taylor_green", grid32)
    tend = rhs_velocity(s)
    assert np.max(np.abs(tend + 2 * s.velocity)) < 1e-12


def test_constant_director_reduces_to_navier_stokes(grid16):
    s = preset_field("constant_director_ns", grid16, amplitude=0.7, seed=2)
    full = rhs_velocity(s, SchemeConfig(dt=1.0))
    ns = rhs_velocity(s, SchemeConfig(dt=1.0, model="navier_stokes_only"))
    assert np.max(np.abs(full - ns)) < 1e-13


def test_velocity_tendency_is_nearly_solenoidal(grid32):
    s = preset_field("random_band_limited", grid32, amplitude=0.5, director_amplitude=0.2)
    # pressure consistent with the undealiased flux that rhs_velocity uses
    s = s.replace(pressure=spectral.solve_pressure(s.velocity, s.director, grid32))
    tend = rhs_velocity(s)
    assert np.max(np.abs(spectral.leray_project(tend, grid32) - tend)) < 1e-8


def test_director_tendency_closed_form():
    grid = PeriodicGrid(64)
    x = grid.coords[0]
    alpha = 0.7
    theta = alpha * np.sin(x)
    d = np.stack([np.cos(theta), np.sin(theta), np.zeros_like(x)])
    s = FlowState(grid, grid.zeros(3), d, grid.zeros())
    # lap d + |grad d|^2 d = theta'' (-sin th, cos th, 0) for a planar rotation
    tpp = -alpha * np.sin(x)
    expected = np.stack([-np.sin(theta) * tpp, np.cos(theta) * tpp, np.zeros_like(x)])
    assert np.max(np.abs(rhs_director(s) - expected)) < 1e-8


def test_director_tendency_tangency(grid32):
    grid = PeriodicGrid(64)
    s = preset_field("small_director_perturbation", grid, amplitude=0.1)
    d = s.director
    lap = spectral.laplacian(d, grid)
    gd2 = np.sum(spectral.gradient(d, grid) ** 2, axis=(0, 1))
    assert np.max(np.abs(np.sum(lap * d, axis=0) + gd2)) < 1e-6


def test_gl_penalty_vanishes_on_sphere(grid16):
    s = preset_field("random_band_limited", grid16)
    eps = 0.1
    u, d = s.velocity, s.director
    gd = spectral.gradient(d, grid16)
    expected = -np.einsum("i...,i...->...", u, gd) + spectral.laplacian(d, grid16)
    assert np.max(np.abs(rhs_director_gl(s, eps) - expected)) < 1e-9


def test_gl_constant_director_arithmetic(grid16):
    s = constant_state(grid16, d=(0.5, 0.0, 0.0))
    out = rhs_director_gl(s, 0.1)
    assert np.allclose(out, 75.0 * s.director, atol=1e-10)


def test_gl_radial_relaxation_matches_ode():
    grid = PeriodicGrid(4)
    eps, r0, t_end = 0.1, 0.5, 0.1
    s = constant_state(grid, d=(r0, 0.0, 0.0))
    cfg = SchemeConfig(dt=2e-5, constraint="ginzburg_landau", gl_epsilon=eps, model="harmonic_map_only")
    for _ in range(int(round(t_end / cfg.dt))):
        s = step(s, cfg)
    sol = solve_ivp(lambda t, r: (1 - r * r) * r / eps**2, (0, t_end), [r0], method="DOP853", rtol=1e-12, atol=1e-14)
    assert abs(s.director[0, 0, 0, 0] - sol.y[0, -1]) < 1e-6
    assert s.time == pytest.approx(t_end)


# --- stepping --------------------------------------------------------------------


@pytest.mark.parametrize("scheme", ["imex_euler", "imex_rk2"])
def test_equilibrium_is_fixed_point(grid16, scheme):
    s = constant_state(grid16, d=(0.6, 0.0, 0.8))
    out = step(s, SchemeConfig(dt=1e-2, scheme=scheme))
    assert np.max(np.abs(out.velocity)) < 1e-14
    assert np.max(np.abs(out.director - s.director)) < 1e-14
    assert out.time == pytest.approx(1e-2)


def test_taylor_green_single_step(grid32):
    s = preset_field("taylor_green", grid32)
    out = step(s, SchemeConfig(dt=1e-3, model="navier_stokes_only"))
    assert np.max(np.abs(out.velocity - taylor_green_velocity(grid32, 1.0, 1e-3))) < 1e-9


def test_full_model_step_postconditions(grid32):
    s = preset_field("random_band_limited", grid32, amplitude=0.5, director_amplitude=0.3)
    out = step(s, SchemeConfig(dt=1e-3))
    check_state(out)
    assert director_defect(out.director) < 1e-12
    p = spectral.solve_pressure(out.velocity, out.director, grid32, dealiased=True)
    assert np.max(np.abs(out.pressure - p)) < 1e-12


def test_navier_stokes_reduction_matches_constant_director_full_model(grid16):
    s = preset_field("constant_director_ns", grid16, amplitude=0.5)
    a = step(s, SchemeConfig(dt=1e-3, model="navier_stokes_only"))
    b = step(s, SchemeConfig(dt=1e-3))
    assert np.max(np.abs(a.velocity - b.velocity)) < 1e-12
    assert np.array_equal(a.director, s.director)


def test_harmonic_map_reduction_matches_full_model_euler_step(grid16):
    s = preset_field("small_director_perturbation", grid16, amplitude=0.2)
    a = step(s, SchemeConfig(dt=1e-3, scheme="imex_euler", model="harmonic_map_only"))
    b = step(s, SchemeConfig(dt=1e-3, scheme="imex_euler"))
    assert np.max(np.abs(a.director - b.director)) < 1e-12
    assert np.all(a.velocity == 0) and np.all(a.pressure == 0)


def test_harmonic_map_only_ignores_velocity(grid16):
    s = preset_field("random_band_limited", grid16)
    cfg = SchemeConfig(dt=1e-3, model="harmonic_map_only")
    a = step(s, cfg)
    b = step(s.replace(velocity=np.zeros_like(s.velocity)), cfg)
    assert np.array_equal(a.director, b.director)


def test_gl_relaxation_approaches_constrained_flow():
    grid = PeriodicGrid(16)
    s = preset_field("small_director_perturbation", grid, amplitude=0.3)
    ref = simulate(s, SchemeConfig(dt=1e-3), 0.1, save_every=100).states[-1].director
    dists = []
    for eps in (0.2, 0.1, 0.05):
        out = simulate(s, SchemeConfig(dt=1e-3, constraint="ginzburg_landau", gl_epsilon=eps), 0.1, save_every=100)
        dists.append(np.max(np.abs(out.states[-1].director - ref)))
    assert dists[0] > dists[1] > dists[2]


def test_rk2_is_second_order():
    grid = PeriodicGrid(16)
    s = preset_field("random_band_limited", grid, amplitude=0.5, director_amplitude=0.3)

    def run(dt):
        out = s
        for _ in range(int(round(0.05 / dt))):
            out = step(out, SchemeConfig(dt=dt))
        return np.concatenate([out.velocity, out.director])

    a, b, c = run(0.01), run(0.005), run(0.0025)
    order = np.log2(np.max(np.abs(a - b)) / np.max(np.abs(b - c)))
    assert order > 1.8


def test_euler_is_first_order():
    grid = PeriodicGrid(16)
    s = preset_field("random_band_limited", grid, amplitude=0.5, director_amplitude=0.3)

    def run(dt):
        out = s
        for _ in range(int(round(0.05 / dt))):
            out = step(out, SchemeConfig(dt=dt, scheme="imex_euler"))
        return np.concatenate([out.velocity, out.director])

    a, b, c = run(0.01), run(0.005), run(0.0025)
    order = np.log2(np.max(np.abs(a - b)) / np.max(np.abs(b - c)))
    assert 0.8 < order < 1.3


def test_overflow_guard_raises(grid16):
    s = preset_field("random_band_limited", grid16, amplitude=50.0)
    with pytest.raises(BlowUpDetected) as info:
        step(s, SchemeConfig(dt=1e-3, overflow_guard=10.0))
    assert info.value.time == pytest.approx(1e-3)


def test_non_finite_values_raise(grid16):
    s = preset_field("random_band_limited", grid16)
    u = s.velocity.copy()
    u[0, 0, 0, 0] = np.nan
    with pytest.raises(BlowUpDetected):
        step(s.replace(velocity=u), SchemeConfig(dt=1e-3))


# --- simulate --------------------------------------------------------------------


def test_simulate_zero_span(grid16):
    s = preset_field("small_director_perturbation", grid16)
    traj = simulate(s, SchemeConfig(dt=1e-3), 0.0)
    assert len(traj.states) == 1 and len(traj.ledger) == 1


def test_simulate_saves_and_final_time(grid16):
    s = preset_field("small_director_perturbation", grid16)
    traj = simulate(s, SchemeConfig(dt=1e-2), 0.095, save_every=3)
    # steps at 0.01 .. 0.09 then a short final step to 0.095
    assert traj.times[-1] == pytest.approx(0.095)
    assert list(np.round(traj.ledger.times, 10)) == [0.0, 0.03, 0.06, 0.09, 0.095]
    for st in traj.states:
        check_state(st)


def test_simulate_keep_states_stride(grid16):
    s = preset_field("small_director_perturbation", grid16)
    traj = simulate(s, SchemeConfig(dt=1e-2), 0.1, save_every=1, keep_states=4)
    assert len(traj.ledger) == 11
    assert list(np.round(traj.times, 10)) == [0.0, 0.04, 0.08, 0.1]
    first_last = simulate(s, SchemeConfig(dt=1e-2), 0.1, keep_states=0)
    assert list(np.round(first_last.times, 10)) == [0.0, 0.1]


def test_simulate_rejects_backwards_time(grid16):
    s = preset_field("small_director_perturbation", grid16)
    with pytest.raises(ValueError):
        simulate(s.replace(time=1.0), SchemeConfig(dt=1e-2), 0.5)


def test_simulate_is_deterministic(grid16):
    s = preset_field("random_band_limited", grid16, seed=11)
    a = simulate(s, SchemeConfig(dt=1e-2), 0.05)
    b = simulate(s, SchemeConfig(dt=1e-2), 0.05)
    assert a.ledger.entries == b.ledger.entries


def test_simulate_attaches_partial_trajectory(grid16):
    s = preset_field("random_band_limited", grid16, amplitude=1000.0)
    with pytest.raises(BlowUpDetected) as info:
        simulate(s, SchemeConfig(dt=1e-2, overflow_guard=1e4), 1.0)
    partial = info.value.trajectory
    assert isinstance(partial, Trajectory) and len(partial.ledger) >= 1
    assert info.value.time > 0


def test_simulate_records_monitor_events(grid16):
    s = preset_field("random_band_limited", grid16)
    mon = analysis.BlowupMonitor(radius=1.0, eps0=1e-6)
    traj = simulate(s, SchemeConfig(dt=1e-2), 0.03, monitors=[mon])
    assert len(traj.events) == 1 and traj.events[0].time == 0.0


def test_trajectory_requires_increasing_times(grid16):
    s = preset_field("small_director_perturbation", grid16)
    with pytest.raises(InvariantViolation):
        Trajectory((s, s), EnergyLedger(), SchemeConfig(dt=1.0))


def test_cfl_number(grid16):
    s = preset_field("taylor_green", grid16, amplitude=2.0)
    assert cfl_number(s, 0.1) == pytest.approx(2.0 * 0.1 / grid16.spacing)
