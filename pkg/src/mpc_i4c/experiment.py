"""Multirate closed loop: cart-pendulum plant, PID on the angle at ``Ts`` and an
MPC reference governor at ``N * Ts`` whose prediction model is the tuned design."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import plant as pl
from .bayesopt import DesignPoint
from .cost import CAP_COST, evaluate_benchmark_cost
from .linsys import (
    CtStateSpace,
    DtStateSpace,
    PidParams,
    augment,
    c2d_zoh,
    hold_resample,
    is_schur_stable,
    pid_realization,
    select_inputs,
)
from .mpc import MpcConfig, MpcController, MpcWeights


@dataclass
class LoopConfig:
    scenario: pl.SimScenario = field(default_factory=pl.SimScenario)
    noise: pl.NoiseConfig = field(default_factory=pl.NoiseConfig)
    params: pl.PendulumParams = field(default_factory=pl.PendulumParams)
    weights: MpcWeights = field(default_factory=lambda: MpcWeights(Q_y=np.array([0.1, 0.1]), Q_u=0.0, Q_du=0.1, Q_eps=1e5))
    p_limits: tuple[float, float] = (-1.0, 1.0)
    phi_limits: tuple[float, float] = (-math.inf, math.inf)
    du_limits: tuple[float, float] = (-math.inf, math.inf)
    N_d: float = 100.0
    rate_ratio: int = 10
    r_p: float = 0.0
    r_phi: float = 0.0
    cap: float = CAP_COST
    screen_unstable: bool = True
    p_abort: float = 10.0
    phi_abort: float = math.pi / 2

    def __post_init__(self):
        if int(self.rate_ratio) != self.rate_ratio or self.rate_ratio < 1:
            raise ValueError("rate_ratio must be a positive integer")
        if not (math.isfinite(self.r_p) and math.isfinite(self.r_phi)):
            raise ValueError("references must be finite")

    @property
    def T_mpc(self) -> float:
        return self.rate_ratio * self.scenario.Ts


@dataclass
class Controllers:
    pid: DtStateSpace
    output_model: DtStateSpace  # g -> [p; phi] sampled at T_mpc
    prediction_model: DtStateSpace  # g -> [u; p; phi] at T_mpc, state [p; phi; pid state]
    mpc_config: MpcConfig
    stable: bool


def output_model_ct(mu) -> CtStateSpace:
    """``xi' = A xi + B g`` with ``y = xi``; ``mu`` holds ``A`` row-major then B's second column."""
    mu = np.asarray(mu, dtype=float)
    if mu.size != 6:
        raise ValueError("mu must have 6 entries")
    A = mu[:4].reshape(2, 2)
    B = np.zeros((2, 2))
    B[:, 1] = mu[4:]
    return CtStateSpace(A, B, np.eye(2), np.zeros((2, 2)))


def angle_pid(theta, cfg: LoopConfig) -> DtStateSpace:
    """PID acting on the angle error only: inputs ``(e_p, e_phi)``, zero gain on ``e_p``."""
    K = pid_realization(PidParams(*theta, N_d=cfg.N_d, Ts=cfg.scenario.Ts))
    B = np.hstack([np.zeros_like(K.B), K.B])
    D = np.hstack([np.zeros_like(K.D), K.D])
    return DtStateSpace(K.A, B, K.C, D, K.sample_time)


def build_controllers(dp: DesignPoint, cfg: LoopConfig) -> Controllers:
    """Realize the inner PID and the MPC prediction model for a design point.

    The interconnection ``[K (I - My); My]`` is formed at the fast rate and
    then sampled every ``rate_ratio`` steps with the command held, so the live
    PID state is directly the controller part of the prediction state.
    Raises ``FloatingPointError`` when the model cannot be discretized.
    """
    Ts = cfg.scenario.Ts
    ct = output_model_ct(dp.mu)
    My_fast = c2d_zoh(ct, Ts)
    My_slow = c2d_zoh(ct, cfg.T_mpc)
    K = angle_pid(dp.theta, cfg)
    aug = select_inputs(augment(K, My_fast), [1])
    pred = hold_resample(aug, cfg.rate_ratio)
    if not np.all(np.isfinite(pred.A)) or not np.all(np.isfinite(pred.B)):
        raise FloatingPointError("prediction model overflow")
    mcfg = MpcConfig(
        Np=int(dp.Np),
        Nu=int(dp.Np),
        weights=cfg.weights,
        y_min=np.array([cfg.p_limits[0], cfg.phi_limits[0]]),
        y_max=np.array([cfg.p_limits[1], cfg.phi_limits[1]]),
        u_min=cfg.scenario.force_limits[0],
        u_max=cfg.scenario.force_limits[1],
        du_min=cfg.du_limits[0],
        du_max=cfg.du_limits[1],
        u_ref=0.0,
        T_mpc=cfg.T_mpc,
        n_u=1,
        n_y=2,
    )
    return Controllers(K, My_slow, pred, mcfg, is_schur_stable(My_slow))


@dataclass
class ClosedLoopTrace:
    """Per-sample signals at ``t = k Ts``, ``k = 0..T``.

    Input-side columns (``u``, ``F_applied``, ``g``, ``epsilon_active``) at the
    last sample repeat the previous value since no input follows it.
    """

    t: np.ndarray
    p: np.ndarray
    phi: np.ndarray
    p_meas: np.ndarray
    phi_meas: np.ndarray
    u: np.ndarray
    F_applied: np.ndarray
    g: np.ndarray
    epsilon_active: np.ndarray

    COLUMNS = ("t", "p", "phi", "p_meas", "phi_meas", "u", "F_applied", "g", "epsilon_active")

    def as_array(self) -> np.ndarray:
        return np.column_stack([getattr(self, c) for c in self.COLUMNS])

    def __len__(self):
        return self.t.size


@dataclass
class RunOutcome:
    trace: ClosedLoopTrace | None
    cost: float
    status: str  # completed | diverged | capped-unstable-model | solver-degraded
    qp_iterations: int = 0


def run_closed_loop(dp: DesignPoint, cfg: LoopConfig, seed: int | None = None, duration: float | None = None,
                    controllers: Controllers | None = None) -> RunOutcome:
    """Simulate one experiment and score it.

    Noise comes from ``seed`` (default: ``cfg.noise.seed``). Runs that leave the
    safe region or blow up numerically are stopped and assigned the cap cost.
    """
    sc = cfg.scenario
    if duration is not None:
        sc = replace(sc, experiment_duration=duration)
    seed = cfg.noise.seed if seed is None else seed
    try:
        ctl = controllers or build_controllers(dp, cfg)
    except FloatingPointError:
        return RunOutcome(None, cfg.cap, "capped-unstable-model")

    Ts, N, T = sc.Ts, cfg.rate_ratio, sc.n_samples
    nz = cfg.noise
    streams = pl.noise_streams(seed)
    meas = streams["measurement"].standard_normal((T + 1, 2)) * np.array([nz.meas_std_p, nz.meas_std_phi])
    dist = pl.LowPassDisturbance(streams["disturbance"], Ts, nz).sequence(T)

    with np.errstate(all="ignore"):
        mpc = MpcController(ctl.prediction_model, ctl.mpc_config)
    if not mpc.problem.is_finite():
        return RunOutcome(None, cfg.cap, "capped-unstable-model")
    r = np.array([cfg.r_p, cfg.r_phi])
    K = ctl.pid
    a11, a22 = K.A[0, 0], K.A[1, 1]
    b1, b2 = K.B[0, 1], K.B[1, 1]
    c1, c2 = K.C[0, 0], K.C[0, 1]
    dK = K.D[0, 1]
    F_lo, F_hi = sc.force_limits

    out = np.full((T + 1, 9), np.nan)
    out[:, 0] = np.arange(T + 1) * Ts
    state = pl.PlantState(*sc.initial_state)
    x1 = x2 = 0.0
    g = 0.0
    eps_on = 0.0
    u_prev = 0.0
    status = "completed"
    qp_iters = 0
    last = T
    for k in range(T + 1):
        pm = state.p + meas[k, 0]
        phm = state.phi + meas[k, 1]
        row = out[k]
        row[1], row[2], row[3], row[4] = state.p, state.phi, pm, phm
        if k == T:
            row[5:] = out[k - 1, 5:] if k else 0.0
            break
        if k % N == 0:
            try:
                info = mpc.step((pm, phm), (x1, x2), u_prev, r)
            except (ValueError, np.linalg.LinAlgError):
                status, last = "diverged", k
                break
            g = float(info.g[0])
            eps_on = 1.0 if info.epsilon > 1e-6 else 0.0
            qp_iters += info.iterations
            if info.status != "success":
                status = "solver-degraded"
        e = g - phm
        u = c1 * x1 + c2 * x2 + dK * e
        x1, x2 = a11 * x1 + b1 * e, a22 * x2 + b2 * e
        F_sat = min(max(u, F_lo), F_hi)
        F = F_sat + dist[k]
        row[5], row[6], row[7], row[8] = u, F, g, eps_on
        try:
            state = pl.advance(state, F, Ts, sc.substeps, cfg.params)
        except (FloatingPointError, pl.SingularMassMatrix):
            status, last = "diverged", k
            break
        if abs(state.p) > cfg.p_abort or abs(state.phi) > cfg.phi_abort:
            status, last = "diverged", k + 1
            out[k + 1, 1:3] = state.p, state.phi
            break
        u_prev = F_sat

    if status == "diverged":
        tr = out[: last + 1]
        trace = ClosedLoopTrace(*tr.T)
        return RunOutcome(trace, cfg.cap, status, qp_iters)
    trace = ClosedLoopTrace(*out.T)
    J = evaluate_benchmark_cost(trace.p_meas[1:], trace.phi_meas[1:], cfg.r_p, cfg.r_phi)
    if not math.isfinite(J):
        return RunOutcome(trace, cfg.cap, "diverged", qp_iters)
    return RunOutcome(trace, J, status, qp_iters)


class Objective:
    """Callable ``(DesignPoint, seed) -> (cost, status)`` for the optimizer."""

    def __init__(self, cfg: LoopConfig):
        self.cfg = cfg

    def __call__(self, dp: DesignPoint, seed: int) -> tuple[float, str]:
        try:
            ctl = build_controllers(dp, self.cfg)
        except FloatingPointError:
            return self.cfg.cap, "capped-unstable-model"
        if self.cfg.screen_unstable and not ctl.stable:
            return self.cfg.cap, "capped-unstable-model"
        res = run_closed_loop(dp, self.cfg, seed, controllers=ctl)
        return res.cost, res.status


def objective(dp: DesignPoint, cfg: LoopConfig, seed: int) -> tuple[float, str]:
    return Objective(cfg)(dp, seed)
