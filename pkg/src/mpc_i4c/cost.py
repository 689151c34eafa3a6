"""Closed-loop performance indices: generic barrier-penalized cost and the
cart-pendulum benchmark cost."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

CAP_COST = 5.0


@dataclass
class ConstraintSpec:
    u_min: np.ndarray | float = -np.inf
    u_max: np.ndarray | float = np.inf
    du_min: np.ndarray | float = -np.inf
    du_max: np.ndarray | float = np.inf
    y_min: np.ndarray | float = -np.inf
    y_max: np.ndarray | float = np.inf

    def __post_init__(self):
        for lo, hi in (("u_min", "u_max"), ("du_min", "du_max"), ("y_min", "y_max")):
            a = np.asarray(getattr(self, lo), dtype=float)
            b = np.asarray(getattr(self, hi), dtype=float)
            both = np.isfinite(a) & np.isfinite(b)
            if np.any(np.broadcast_to(a, both.shape)[both] >= np.broadcast_to(b, both.shape)[both]):
                raise ValueError(f"{lo} must be below {hi}")
            setattr(self, lo, a)
            setattr(self, hi, b)


@dataclass
class Trajectory:
    """Sampled signals, one row per sample ``t = 1..T``."""

    y: np.ndarray
    u: np.ndarray
    g: np.ndarray | None = None
    r: np.ndarray | None = None
    status: str = "completed"

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=float)
        self.u = np.asarray(self.u, dtype=float)
        if self.y.ndim == 1:
            self.y = self.y[:, None]
        if self.u.ndim == 1:
            self.u = self.u[:, None]
        if self.y.shape[0] != self.u.shape[0]:
            raise ValueError("y and u must have equal lengths")

    @property
    def T(self) -> int:
        return self.y.shape[0]


@dataclass
class PenaltySpec:
    """One barrier per margin ``h_1..h_6``; each maps ``(h, t)`` to a penalty."""

    barriers: Sequence[Callable[[np.ndarray, np.ndarray], np.ndarray]] = field(default_factory=list)


def margins(traj: Trajectory, spec: ConstraintSpec, u0=None) -> list[np.ndarray]:
    """The six margins ``h_i(t) >= 0`` of the input, rate and output limits.

    ``u0`` is the input before the first sample; by default the first increment
    is taken as zero.
    """
    u = traj.u
    prev = np.vstack([u[:1] if u0 is None else np.atleast_2d(u0), u[:-1]])
    du = u - prev
    y = traj.y
    return [
        u - spec.u_min,
        spec.u_max - u,
        du - spec.du_min,
        spec.du_max - du,
        y - spec.y_min,
        spec.y_max - y,
    ]


def zero_inside(h, t=None):
    return np.zeros_like(h, dtype=float)


def evaluate_general_cost(traj: Trajectory, base_cost: Callable, penalties: PenaltySpec, spec: ConstraintSpec, u0=None) -> float:
    """``J(y, u) + sum_t sum_i b_t(h_i(t))``."""
    total = float(base_cost(traj.y, traj.u))
    hs = margins(traj, spec, u0)
    t = np.arange(1, traj.T + 1)
    for h, b in zip(hs, penalties.barriers):
        tt = np.broadcast_to(t[:, None], h.shape)
        with np.errstate(invalid="ignore"):
            vals = b(h, tt)
        total += float(np.nansum(vals))
    return total


def barrier_p(p):
    """Linear penalty ``10 (|p| - 1)`` outside the track limits, zero inside."""
    a = np.abs(p)
    out = np.where(a > 1.0, 10.0 * (a - 1.0), 0.0)
    return float(out) if np.ndim(p) == 0 else out


def evaluate_benchmark_cost(p, phi, r_p: float = 0.0, r_phi: float = 0.0) -> float:
    """Log mean weighted tracking error plus log of (mean position barrier + 1).

    ``p`` and ``phi`` are the sampled (measured) outputs for ``t = 1..T``.
    Returns ``-inf`` if the tracking error is exactly zero.
    """
    p = np.asarray(p, dtype=float)
    phi = np.asarray(phi, dtype=float)
    if p.size < 1 or p.shape != phi.shape:
        raise ValueError("need equally long, non-empty p and phi")
    track = np.mean(0.1 * np.abs(r_p - p) + 0.9 * np.abs(r_phi - phi))
    bar = np.mean(barrier_p(p))
    if track <= 0.0:
        return -math.inf
    return math.log(track) + math.log(bar + 1.0)


def finite_or_cap(J: float, cap: float = CAP_COST) -> float:
    return J if math.isfinite(J) else cap
