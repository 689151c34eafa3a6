import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from mpc_i4c.cost import (
    CAP_COST,
    ConstraintSpec,
    PenaltySpec,
    Trajectory,
    barrier_p,
    evaluate_benchmark_cost,
    evaluate_general_cost,
    finite_or_cap,
    margins,
    zero_inside,
)


def scalar_benchmark(p, phi):
    track = 0.0
    bar = 0.0
    for a, b in zip(p, phi):
        track += 0.1 * abs(a) + 0.9 * abs(b)
        bar += 10.0 * (abs(a) - 1.0) if abs(a) > 1.0 else 0.0
    T = len(p)
    return math.log(track / T) + math.log(bar / T + 1.0)


def test_barrier_values():
    assert barrier_p(0.5) == 0.0
    assert barrier_p(1.5) == pytest.approx(5.0)
    assert barrier_p(-1.2) == pytest.approx(2.0)
    assert barrier_p(1.0) == 0.0
    assert barrier_p(1.0 + 1e-12) < 1e-10


def test_benchmark_cost_constant_signals():
    T = 100
    assert evaluate_benchmark_cost(np.full(T, 0.5), np.full(T, 0.1)) == pytest.approx(math.log(0.14), abs=1e-12)
    assert evaluate_benchmark_cost(np.full(T, 1.5), np.zeros(T)) == pytest.approx(math.log(0.15) + math.log(6.0), abs=1e-12)


def test_benchmark_cost_matches_scalar_reimplementation():
    rng = np.random.default_rng(0)
    for _ in range(20):
        p = rng.normal(0, 0.8, 500)
        phi = rng.normal(0, 0.2, 500)
        assert evaluate_benchmark_cost(p, phi) == pytest.approx(scalar_benchmark(p, phi), abs=1e-12)


def test_benchmark_cost_reference_offsets():
    p = np.full(10, 0.3)
    phi = np.full(10, 0.2)
    assert evaluate_benchmark_cost(p, phi, r_p=0.3, r_phi=0.0) == pytest.approx(math.log(0.18))


def test_zero_error_sentinel():
    assert evaluate_benchmark_cost(np.zeros(5), np.zeros(5)) == -math.inf
    assert finite_or_cap(-math.inf) == CAP_COST
    assert finite_or_cap(1.5) == 1.5


def test_shape_checks():
    with pytest.raises(ValueError):
        evaluate_benchmark_cost(np.zeros(3), np.zeros(4))
    with pytest.raises(ValueError):
        evaluate_benchmark_cost([], [])


signal = arrays(np.float64, 50, elements=st.floats(-3, 3))


@given(signal, signal, st.integers(0, 49), st.floats(0.0, 1.0))
def test_cost_monotone_in_pointwise_magnitude(p, phi, i, bump):
    phi = phi.copy()
    phi[0] = phi[0] if phi[0] != 0 else 0.1
    base = evaluate_benchmark_cost(p, phi)
    p2, phi2 = p.copy(), phi.copy()
    p2[i] = np.sign(p2[i] or 1.0) * (abs(p2[i]) + bump)
    phi2[i] = np.sign(phi2[i] or 1.0) * (abs(phi2[i]) + bump)
    assert evaluate_benchmark_cost(p2, phi2) >= base - 1e-12


@given(signal, signal)
def test_barrier_term_nonnegative(p, phi):
    phi = phi + 0.01
    track = np.mean(0.1 * np.abs(p) + 0.9 * np.abs(phi))
    assert evaluate_benchmark_cost(p, phi) >= math.log(track) - 1e-12


def test_margins_and_general_cost():
    traj = Trajectory(y=[[0.5], [1.5], [0.0]], u=[[1.0], [3.0], [2.0]])
    spec = ConstraintSpec(u_min=-2.0, u_max=2.5, du_max=1.5, y_max=1.0)
    hs = margins(traj, spec, u0=[[0.0]])
    np.testing.assert_allclose(hs[1].ravel(), [1.5, -0.5, 0.5])
    np.testing.assert_allclose(hs[3].ravel(), [0.5, -0.5, 2.5])
    np.testing.assert_allclose(hs[5].ravel(), [0.5, -0.5, 1.0])

    def hinge(h, t):
        return np.where(h < 0, -h, 0.0)

    base = lambda y, u: float(np.sum(y**2))  # noqa: E731
    zero = PenaltySpec([zero_inside] * 6)
    assert evaluate_general_cost(traj, base, zero, spec, u0=[[0.0]]) == pytest.approx(2.5)
    # three violated samples, each by 0.5
    J = evaluate_general_cost(traj, base, PenaltySpec([hinge] * 6), spec, u0=[[0.0]])
    assert J == pytest.approx(2.5 + 1.5)


def test_general_cost_matches_double_sum():
    rng = np.random.default_rng(1)
    y = rng.normal(size=(40, 2))
    u = rng.normal(size=(40, 1))
    traj = Trajectory(y, u)
    spec = ConstraintSpec(u_min=-1, u_max=1, du_min=-0.5, du_max=0.5, y_min=[-1, -1], y_max=[1, 1])

    def quad(h, t):
        return np.where(h < 0, h * h * t, 0.0)

    got = evaluate_general_cost(traj, lambda y, u: 0.0, PenaltySpec([quad] * 6), spec)
    prev = np.vstack([u[:1], u[:-1]])
    ref = 0.0
    for t in range(40):
        cols = [u[t] + 1, 1 - u[t], (u[t] - prev[t]) + 0.5, 0.5 - (u[t] - prev[t]), y[t] + 1, 1 - y[t]]
        for h in cols:
            for v in np.atleast_1d(h):
                if v < 0:
                    ref += v * v * (t + 1)
    assert got == pytest.approx(ref, rel=1e-12)


def test_constraint_spec_validation():
    with pytest.raises(ValueError):
        ConstraintSpec(u_min=1.0, u_max=0.0)
    with pytest.raises(ValueError):
        Trajectory(y=np.zeros(3), u=np.zeros(4))
