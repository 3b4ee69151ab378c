import numpy as np
import pytest
from hypothesis import given, strategies as st

from nflab import analysis as A
from nflab.dynamics import SchemeConfig, simulate
from nflab.errors import IncompatibleLambda
from nflab.grid import PeriodicGrid, preset_field
from nflab.scaling import (
    RescaleSpec,
    fourier_resample,
    invariance_report,
    rescale_cylinder,
    rescale_state,
    rescale_trajectory,
)


@pytest.fixture(scope="module")
def tg_run():
    grid = PeriodicGrid(16)
    s = preset_field("taylor_green", grid)
    return simulate(s, SchemeConfig(dt=1e-3, model="navier_stokes_only"), 0.05, save_every=5)


@pytest.fixture(scope="module")
def full_run():
    grid = PeriodicGrid(16)
    s = preset_field("random_band_limited", grid, amplitude=0.3, director_amplitude=0.2)
    return simulate(s, SchemeConfig(dt=1e-3), 0.04, save_every=2)


def test_spec_validation():
    for lam in (0.0, -2.0, float("inf")):
        with pytest.raises(IncompatibleLambda):
            RescaleSpec(lam)
    with pytest.raises(ValueError):
        RescaleSpec(2.0, regrid="nearest")


def test_identity_rescaling_is_bitwise(full_run):
    s = full_run.states[-1]
    out = rescale_state(s, RescaleSpec(1.0))
    assert out is s


def test_non_integer_lambda_rejected(full_run):
    with pytest.raises(IncompatibleLambda):
        rescale_state(full_run.states[0], RescaleSpec(1.5))
    rescale_state(full_run.states[0], RescaleSpec(0.25))


def test_rescaled_state_fields(full_run):
    s = full_run.states[-1]
    out = rescale_state(s, RescaleSpec(2.0))
    assert out.grid.length == pytest.approx(s.grid.length / 2) and out.grid.n == s.grid.n
    assert out.time == pytest.approx(s.time / 4)
    assert np.array_equal(out.velocity, 2 * s.velocity)
    assert np.array_equal(out.pressure, 4 * s.pressure)
    assert np.array_equal(out.director, s.director)


def test_l3_and_e3_invariance(full_run):
    s = full_run.states[-1]
    out = rescale_state(s, RescaleSpec(2.0))
    assert A.l3_norm(out.velocity, out.grid) == pytest.approx(A.l3_norm(s.velocity, s.grid), rel=1e-10)
    assert A.energy_l3(out) == pytest.approx(A.energy_l3(s), rel=1e-8)


def test_uloc_covariance(full_run):
    s = full_run.states[-1]
    lam = 2.0
    out = rescale_state(s, RescaleSpec(lam))
    R = 1.5
    a = A.uloc_pair_norm(s, A.UlocParams(R, 2, "direct"))
    b = A.uloc_pair_norm(out, A.UlocParams(R / lam, 2, "direct"))
    assert b == pytest.approx(a, rel=1e-3)


@given(st.sampled_from([2.0, 3.0, 4.0, 0.5, 0.25]))
def test_round_trip(lam):
    grid = PeriodicGrid(8)
    s = preset_field("random_band_limited", grid, kmax=1)
    back = rescale_state(rescale_state(s, RescaleSpec(lam)), RescaleSpec(1 / lam))
    assert back.grid.length == pytest.approx(grid.length)
    for name in ("velocity", "director", "pressure"):
        assert np.max(np.abs(getattr(back, name) - getattr(s, name))) < 1e-10
    assert back.time == pytest.approx(s.time)


def test_rescaled_equilibrium_rhs_is_covariant(full_run):
    from nflab.dynamics import rhs_velocity

    s = full_run.states[-1]
    lam = 2.0
    out = rescale_state(s, RescaleSpec(lam))
    assert np.max(np.abs(rhs_velocity(out) - lam**3 * rhs_velocity(s))) < 1e-9 * np.max(np.abs(rhs_velocity(out)))


def test_fourier_resample_band_limited(full_run):
    grid = PeriodicGrid(16)
    x, y, z = grid.coords
    f = np.sin(x) * np.cos(2 * y) + 0.3 * np.cos(3 * z)
    up = fourier_resample(f, 32)
    g2 = PeriodicGrid(32)
    X, Y, Z = g2.coords
    assert np.max(np.abs(up - (np.sin(X) * np.cos(2 * Y) + 0.3 * np.cos(3 * Z)))) < 1e-12
    assert np.max(np.abs(fourier_resample(up, 16) - f)) < 1e-12


def test_spectral_resample_changes_grid(full_run):
    s = full_run.states[0]
    spec = RescaleSpec(1.5, regrid="spectral_resample", target_n=24)
    out = rescale_state(s, spec)
    assert out.grid.n == 24 and spec.approximate
    assert out.grid.length == pytest.approx(s.grid.length / 1.5)
    # band-limited velocity: L3 norm preserved up to interpolation of |u|^3
    assert A.l3_norm(out.velocity, out.grid) == pytest.approx(A.l3_norm(s.velocity, s.grid), rel=1e-2)


def test_rescale_trajectory_and_cylinder(full_run):
    lam = 2.0
    scaled = rescale_trajectory(full_run, RescaleSpec(lam))
    assert np.allclose(scaled.times, full_run.times / lam**2)
    assert scaled.config.dt == pytest.approx(full_run.config.dt / lam**2)
    cyl = A.Cylinder((np.pi, np.pi, np.pi), 0.04, 0.15)
    qa = A.cylinder_quantities(full_run, cyl)
    qb = A.cylinder_quantities(scaled, rescale_cylinder(cyl, lam))
    for key in ("q_u", "q_P", "q_gradd"):
        assert getattr(qb, key) == pytest.approx(getattr(qa, key), rel=1e-2)


def test_report_identity(tg_run):
    rep = invariance_report(tg_run, RescaleSpec(1.0))
    assert all(q["rel_dev"] == 0.0 for q in rep.quantities)


def test_report_equilibrium():
    grid = PeriodicGrid(8)
    s = preset_field("small_director_perturbation", grid, amplitude=0.0, kmax=1)
    traj = simulate(s, SchemeConfig(dt=1e-2), 0.02)
    rep = invariance_report(traj, RescaleSpec(2.0))
    assert all(q["rel_dev"] == 0.0 for q in rep.quantities)


def test_report_taylor_green(tg_run):
    cyl = A.Cylinder((np.pi, np.pi, np.pi), 0.05, 0.2)
    rep = invariance_report(tg_run, RescaleSpec(2.0), [cyl])
    d = rep.as_dict()
    assert d["lambda"] == 2.0 and d["grid_after"]["L"] == pytest.approx(np.pi)
    names = {q["name"] for q in d["quantities"]}
    assert {"E3@t0", "L3_u@t1", "uloc3@t0", "rhs_covariance@t1", "cyl0.q_u", "fd_residual"} <= names
    assert rep.max_deviation("E3") < 1e-8
    assert rep.max_deviation("uloc3") < 1e-3
    assert rep.max_deviation("cyl0") < 1e-2
    fd = next(q for q in d["quantities"] if q["name"] == "fd_residual")
    assert fd["after"] < 1e-3


def test_report_rejects_bad_lambda(tg_run):
    with pytest.raises(IncompatibleLambda):
        invariance_report(tg_run, RescaleSpec(1.5))
