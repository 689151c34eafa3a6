import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mpc_i4c import plant as pl
from oracles import pendulum_accel_dense

PAR = pl.PendulumParams()
FRICTIONLESS = pl.PendulumParams(b=0.0, f_phi=0.0)


def test_upright_equilibrium_is_fixed_point():
    d = pl.dynamics_rhs((0.0, 0.0, 0.0, 0.0), 0.0, PAR)
    assert np.array_equal(d, np.zeros(4))


def test_small_tilt_falls_toward_tilt():
    d = pl.dynamics_rhs((0.0, 0.0, 0.01, 0.0), 0.0, PAR)
    assert d[3] > 0


def test_force_pushes_cart():
    d = pl.dynamics_rhs((0.0, 0.0, 0.0, 0.0), 1.0, PAR)
    assert d[1] > 0
    assert d[3] < 0


@given(
    st.floats(-5, 5), st.floats(-2 * math.pi, 2 * math.pi), st.floats(-10, 10), st.floats(-50, 50)
)
def test_accel_matches_dense_solve(v, phi, w, F):
    got = pl.dynamics_rhs((0.3, v, phi, w), F, PAR)
    ref = pendulum_accel_dense((0.3, v, phi, w), F, PAR.M, PAR.m, PAR.L, PAR.g_grav, PAR.b, PAR.f_phi)
    np.testing.assert_allclose(got[[1, 3]], ref, rtol=1e-12, atol=1e-12)


def test_singular_mass_matrix_detected():
    # det = (M + m) L - m L cos^2 vanishes when M = 0 and phi = 0
    with pytest.raises(pl.SingularMassMatrix):
        pl.dynamics_rhs((0, 0, 0, 0), 0.0, pl.PendulumParams(M=1e-300))


def test_rk4_rejects_nonpositive_dt():
    with pytest.raises(ValueError):
        pl.rk4_step((0, 0, 0, 0), 0.0, 0.0, PAR)


def test_rk4_raises_on_overflow():
    with pytest.raises(FloatingPointError):
        pl.rk4_step((0, 1e308, 0, 0), 1e308, 1.0, PAR)


def test_rk4_fourth_order_convergence():
    x0 = (0.0, 0.0, 2.5, 0.0)
    T = 1.0

    def run(n):
        s = x0
        for _ in range(n):
            s = pl.rk4_step(s, 0.0, T / n, FRICTIONLESS)
        return np.array(s)

    ref = run(20000)
    hs, errs = [], []
    for n in (50, 100, 200, 400):
        hs.append(T / n)
        errs.append(np.max(np.abs(run(n) - ref)))
    slope = np.polyfit(np.log(hs), np.log(errs), 1)[0]
    assert abs(slope - 4.0) <= 0.2


def test_energy_conserved_without_friction():
    s = (0.0, 0.0, 0.5, 0.0)
    E0 = pl.mechanical_energy(s, FRICTIONLESS)
    for _ in range(2000):
        s = pl.rk4_step(s, 0.0, 0.5e-3, FRICTIONLESS)
    assert abs(pl.mechanical_energy(s, FRICTIONLESS) - E0) / abs(E0) < 1e-6


def test_friction_dissipates_energy():
    s = (0.0, 0.0, 3.0, 0.0)
    E0 = pl.mechanical_energy(s, PAR)
    s = pl.advance(s, 0.0, 2.0, 4000, PAR)
    assert pl.mechanical_energy(s, PAR) < E0


def test_advance_equals_repeated_steps():
    s = (0.1, 0.2, 0.3, 0.4)
    a = pl.advance(s, 2.0, 0.005, 10, PAR)
    b = s
    for _ in range(10):
        b = pl.rk4_step(b, 2.0, 0.0005, PAR)
    assert tuple(a) == tuple(b)


def test_params_validation():
    with pytest.raises(ValueError):
        pl.PendulumParams(L=0.0)
    with pytest.raises(ValueError):
        pl.NoiseConfig(dist_std=-1.0)
    with pytest.raises(ValueError):
        pl.SimScenario(force_limits=(1.0, -1.0))


def test_scenario_sample_count():
    assert pl.SimScenario().n_samples == 2000
    assert pl.SimScenario(experiment_duration=20.0).n_samples == 4000


def test_noise_streams_reproducible_and_independent():
    a = pl.noise_streams(7)
    b = pl.noise_streams(7)
    x = a["measurement"].standard_normal(100)
    assert np.array_equal(x, b["measurement"].standard_normal(100))
    y = a["disturbance"].standard_normal(100)
    assert abs(np.corrcoef(x, y)[0, 1]) < 0.4


def test_disturbance_stationary_statistics():
    cfg = pl.NoiseConfig()
    d = pl.LowPassDisturbance(np.random.default_rng(0), 0.005, cfg).sequence(400_000)
    assert abs(d.std() - 1.0) < 0.05
    # lag-one correlation of the first-order filter
    a = math.exp(-10.0 * 0.005)
    assert abs(np.corrcoef(d[:-1], d[1:])[0, 1] - a) < 0.01


def test_disturbance_sequence_matches_steps():
    cfg = pl.NoiseConfig()
    a = pl.LowPassDisturbance(np.random.default_rng(3), 0.005, cfg)
    b = pl.LowPassDisturbance(np.random.default_rng(3), 0.005, cfg)
    seq = a.sequence(50)
    steps = np.array([pl.disturbance_step(b) for _ in range(50)])
    np.testing.assert_allclose(seq, steps, rtol=1e-13, atol=1e-15)


def test_silent_noise_is_zero():
    cfg = pl.NoiseConfig.silent()
    d = pl.LowPassDisturbance(np.random.default_rng(0), 0.005, cfg)
    assert np.all(d.sequence(10) == 0.0)
    assert pl.measure((1.0, 0, 0.2, 0), np.random.default_rng(0), cfg) == (1.0, 0.2)


@settings(max_examples=25)
@given(st.integers(0, 2**32 - 1))
def test_measurement_noise_scale(seed):
    rng = np.random.default_rng(seed)
    cfg = pl.NoiseConfig()
    samples = np.array([pl.measure((0, 0, 0, 0), rng, cfg) for _ in range(200)])
    assert np.all(np.abs(samples) < 0.01 * 6)
