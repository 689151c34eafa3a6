"""Inverted pendulum on a cart: nonlinear dynamics, RK4 integration and noise sources."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np


class PlantState(NamedTuple):
    p: float = 0.0
    p_dot: float = 0.0
    phi: float = 0.0
    phi_dot: float = 0.0


@dataclass(frozen=True)
class PendulumParams:
    """Physical constants of the cart-pendulum.

    ``f_phi`` multiplies the angular rate in the pendulum equation, so its unit
    is m/s like the rest of that equation divided by rad/s.
    """

    M: float = 0.5
    m: float = 0.2
    L: float = 0.3
    g_grav: float = 9.81
    b: float = 0.1
    f_phi: float = 0.1

    def __post_init__(self):
        for name in ("M", "m", "L", "g_grav"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        for name in ("b", "f_phi"):
            if not getattr(self, name) >= 0:
                raise ValueError(f"{name} must be non-negative, got {getattr(self, name)}")


@dataclass(frozen=True)
class NoiseConfig:
    meas_std_p: float = 0.01
    meas_std_phi: float = 0.01
    dist_std: float = 1.0
    dist_bandwidth: float = 10.0
    seed: int = 0

    def __post_init__(self):
        if min(self.meas_std_p, self.meas_std_phi, self.dist_std) < 0:
            raise ValueError("noise standard deviations must be non-negative")
        if not self.dist_bandwidth > 0:
            raise ValueError("dist_bandwidth must be positive")

    @classmethod
    def silent(cls, seed: int = 0) -> "NoiseConfig":
        return cls(meas_std_p=0.0, meas_std_phi=0.0, dist_std=0.0, seed=seed)


@dataclass(frozen=True)
class SimScenario:
    Ts: float = 0.005
    experiment_duration: float = 10.0
    initial_state: PlantState = field(default_factory=lambda: PlantState(0.0, 0.0, math.pi / 20, 0.0))
    force_limits: tuple[float, float] = (-20.0, 20.0)
    substeps: int = 10

    def __post_init__(self):
        if not self.Ts > 0:
            raise ValueError("Ts must be positive")
        if self.force_limits[0] >= self.force_limits[1]:
            raise ValueError("force_limits must satisfy F_min < F_max")
        if self.substeps < 1:
            raise ValueError("substeps must be >= 1")
        ratio = self.experiment_duration / self.Ts
        if self.experiment_duration <= 0 or abs(ratio - round(ratio)) > 1e-9 * max(1.0, ratio):
            raise ValueError("experiment_duration must be a positive multiple of Ts")

    @property
    def n_samples(self) -> int:
        return int(round(self.experiment_duration / self.Ts))


class SingularMassMatrix(ArithmeticError):
    pass


def _accel(p_dot, phi, phi_dot, F, par: PendulumParams):
    # (M+m) p'' + m L cos(phi) phi'' = F + m L phi'^2 sin(phi) - b p'
    # cos(phi) p'' + L phi''          = g sin(phi) - f_phi phi'
    if not math.isfinite(phi):
        raise FloatingPointError("non-finite pendulum angle")
    s = math.sin(phi)
    c = math.cos(phi)
    r1 = F + par.m * par.L * phi_dot * phi_dot * s - par.b * p_dot
    r2 = par.g_grav * s - par.f_phi * phi_dot
    a11 = par.M + par.m
    a12 = par.m * par.L * c
    det = a11 * par.L - a12 * c
    if abs(det) < 1e-12:
        raise SingularMassMatrix(f"mass matrix determinant {det:g}")
    p_ddot = (par.L * r1 - a12 * r2) / det
    phi_ddot = (a11 * r2 - c * r1) / det
    return p_ddot, phi_ddot


def dynamics_rhs(state, F: float, params: PendulumParams) -> np.ndarray:
    """Time derivative ``(p', p'', phi', phi'')`` of the cart-pendulum state."""
    p, p_dot, phi, phi_dot = state
    p_ddot, phi_ddot = _accel(p_dot, phi, phi_dot, F, params)
    return np.array([p_dot, p_ddot, phi_dot, phi_ddot])


def rk4_step(state, F: float, dt: float, params: PendulumParams) -> PlantState:
    """One classical Runge-Kutta step with the force held over ``dt``.

    Raises ``FloatingPointError`` when the result is not finite.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    x0, v0, a0, w0 = state
    h = 0.5 * dt

    dv1, dw1 = _accel(v0, a0, w0, F, params)
    x1, v1, a1, w1 = x0 + h * v0, v0 + h * dv1, a0 + h * w0, w0 + h * dw1
    dv2, dw2 = _accel(v1, a1, w1, F, params)
    x2, v2, a2, w2 = x0 + h * v1, v0 + h * dv2, a0 + h * w1, w0 + h * dw2
    dv3, dw3 = _accel(v2, a2, w2, F, params)
    x3, v3, a3, w3 = x0 + dt * v2, v0 + dt * dv3, a0 + dt * w2, w0 + dt * dw3
    dv4, dw4 = _accel(v3, a3, w3, F, params)

    k = dt / 6.0
    out = PlantState(
        x0 + k * (v0 + 2.0 * v1 + 2.0 * v2 + v3),
        v0 + k * (dv1 + 2.0 * dv2 + 2.0 * dv3 + dv4),
        a0 + k * (w0 + 2.0 * w1 + 2.0 * w2 + w3),
        w0 + k * (dw1 + 2.0 * dw2 + 2.0 * dw3 + dw4),
    )
    if not all(map(math.isfinite, out)):
        raise FloatingPointError("non-finite plant state")
    return out


def advance(state, F: float, dt: float, substeps: int, params: PendulumParams) -> PlantState:
    """Integrate over ``dt`` with ``substeps`` equal RK4 steps, ``F`` held constant."""
    h = dt / substeps
    for _ in range(substeps):
        state = rk4_step(state, F, h, params)
    return PlantState(*state)


def mechanical_energy(state, params: PendulumParams) -> float:
    """Kinetic plus potential energy, potential measured from the pivot height."""
    p, v, phi, w = state
    M, m, L = params.M, params.m, params.L
    kinetic = 0.5 * (M + m) * v * v + m * L * v * w * math.cos(phi) + 0.5 * m * L * L * w * w
    return kinetic + m * params.g_grav * L * math.cos(phi)


def noise_streams(seed: int) -> dict[str, np.random.Generator]:
    """Independent named generators for each noise source, all derived from ``seed``."""
    meas, dist = np.random.SeedSequence(seed).spawn(2)
    return {"measurement": np.random.default_rng(meas), "disturbance": np.random.default_rng(dist)}


class LowPassDisturbance:
    """First-order low-pass filtered white noise with a prescribed stationary std.

    ``x+ = a x + (1 - a) w`` with ``a = exp(-bandwidth * dt)``; the white input
    ``w`` is scaled so that ``std(x) = dist_std`` once stationary. The filter
    starts from a draw of the stationary distribution.
    """

    def __init__(self, rng: np.random.Generator, dt: float, config: NoiseConfig):
        self.rng = rng
        self.std = config.dist_std
        self.a = math.exp(-config.dist_bandwidth * dt)
        self.w_std = self.std * math.sqrt((1.0 + self.a) / (1.0 - self.a)) if self.std > 0 else 0.0
        self.x = self.std * rng.standard_normal() if self.std > 0 else 0.0

    def step(self) -> float:
        if self.std == 0.0:
            return 0.0
        self.x = self.a * self.x + (1.0 - self.a) * self.w_std * self.rng.standard_normal()
        return self.x

    def sequence(self, n: int) -> np.ndarray:
        """Next ``n`` samples; identical to calling :meth:`step` ``n`` times."""
        if self.std == 0.0:
            return np.zeros(n)
        w = self.rng.standard_normal(n) * ((1.0 - self.a) * self.w_std)
        out = np.empty(n)
        x = self.x
        a = self.a
        for k in range(n):
            x = a * x + w[k]
            out[k] = x
        self.x = x
        return out


def disturbance_step(rng_state: LowPassDisturbance) -> float:
    """Advance the disturbance process by one sample and return the force perturbation."""
    return rng_state.step()


def measure(state, rng: np.random.Generator, config: NoiseConfig) -> tuple[float, float]:
    """Noisy ``(p, phi)`` measurement."""
    n_p, n_phi = rng.standard_normal(2)
    return state[0] + config.meas_std_p * n_p, state[2] + config.meas_std_phi * n_phi
