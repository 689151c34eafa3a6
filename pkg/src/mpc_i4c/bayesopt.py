"""Bayesian optimization over a box of real parameters plus one integer horizon,
with an expected-improvement acquisition."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable

import numpy as np
from scipy.special import erfc

from . import gp as gpmod
from .cost import CAP_COST

log = logging.getLogger(__name__)

SQRT2 = math.sqrt(2.0)
INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


@dataclass(frozen=True)
class DesignPoint:
    theta: tuple[float, ...]
    mu: tuple[float, ...]
    Np: int

    def vector(self) -> np.ndarray:
        return np.array([*self.theta, *self.mu, float(self.Np)])

    def to_dict(self) -> dict:
        return {"theta": list(self.theta), "mu": list(self.mu), "Np": int(self.Np)}

    @classmethod
    def from_dict(cls, d: dict) -> "DesignPoint":
        return cls(tuple(float(v) for v in d["theta"]), tuple(float(v) for v in d["mu"]), int(d["Np"]))


@dataclass(frozen=True)
class SearchSpace:
    theta_lo: tuple[float, ...]
    theta_hi: tuple[float, ...]
    mu_lo: tuple[float, ...]
    mu_hi: tuple[float, ...]
    Np_range: tuple[int, int] = (10, 20)

    def __post_init__(self):
        if len(self.theta_lo) != len(self.theta_hi) or len(self.mu_lo) != len(self.mu_hi):
            raise ValueError("bound vectors must pair up")
        if any(a >= b for a, b in zip(self.theta_lo + self.mu_lo, self.theta_hi + self.mu_hi)):
            raise ValueError("each lower bound must be below its upper bound")
        if self.Np_range[0] > self.Np_range[1] or self.Np_range[0] < 1:
            raise ValueError("Np range must be a nonempty range of positive integers")

    @classmethod
    def box(cls, n_theta: int, n_mu: int, half_width: float, Np_range=(10, 20)) -> "SearchSpace":
        return cls((-half_width,) * n_theta, (half_width,) * n_theta, (-half_width,) * n_mu, (half_width,) * n_mu, tuple(Np_range))

    @property
    def n_theta(self) -> int:
        return len(self.theta_lo)

    @property
    def dim(self) -> int:
        return len(self.theta_lo) + len(self.mu_lo) + 1

    @property
    def lower(self) -> np.ndarray:
        return np.array([*self.theta_lo, *self.mu_lo, self.Np_range[0]], dtype=float)

    @property
    def upper(self) -> np.ndarray:
        return np.array([*self.theta_hi, *self.mu_hi, self.Np_range[1]], dtype=float)

    def _span(self):
        span = self.upper - self.lower
        span[span == 0] = 1.0
        return span

    def round_unit(self, U) -> np.ndarray:
        """Snap the horizon coordinate of unit-cube points to its integer grid."""
        U = np.array(U, dtype=float, copy=True)
        lo, hi = self.Np_range
        if hi > lo:
            U[..., -1] = (np.clip(np.rint(lo + U[..., -1] * (hi - lo)), lo, hi) - lo) / (hi - lo)
        else:
            U[..., -1] = 0.0
        return U

    def from_unit(self, u) -> DesignPoint:
        u = self.round_unit(np.clip(np.asarray(u, dtype=float), 0.0, 1.0))
        x = self.lower + u * self._span()
        nt = self.n_theta
        nm = len(self.mu_lo)
        return DesignPoint(tuple(float(v) for v in x[:nt]), tuple(float(v) for v in x[nt:nt + nm]), int(round(x[-1])))

    def to_unit(self, dp: DesignPoint) -> np.ndarray:
        return self.round_unit((dp.vector() - self.lower) / self._span())

    def contains(self, dp: DesignPoint) -> bool:
        x = dp.vector()
        return bool(np.all(x >= self.lower) and np.all(x <= self.upper) and float(dp.Np).is_integer())


@dataclass
class BoConfig:
    n_init: int = 10
    i_max: int = 320
    seed: int = 0
    n_probes: int = 2000
    n_refine: int = 5
    refine_iters: int = 50
    cap: float = CAP_COST
    hyper_starts: int = 8
    early_stop_window: int | None = None
    early_stop_tol: float = 1e-3

    def __post_init__(self):
        if not 1 <= self.n_init <= self.i_max:
            raise ValueError("need 1 <= n_init <= i_max")


@dataclass
class BoRecord:
    index: int
    point: DesignPoint
    cost: float
    status: str
    seed: int
    hyper: gpmod.GpHyperparams | None
    best_cost: float


@dataclass
class BoDataset:
    records: list[BoRecord] = field(default_factory=list)

    def __len__(self):
        return len(self.records)

    def append(self, rec: BoRecord):
        if not math.isfinite(rec.cost):
            raise ValueError("dataset costs must be finite")
        self.records.append(rec)

    @property
    def costs(self) -> np.ndarray:
        return np.array([r.cost for r in self.records])

    def best(self) -> BoRecord:
        return min(self.records, key=lambda r: r.cost)


def iteration_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng([seed, index])


def experiment_seed(seed: int, index: int) -> int:
    """Noise seed for experiment ``index`` of a campaign; independent of resume points."""
    return int(np.random.SeedSequence([seed, index, 1]).generate_state(1)[0])


def initial_design(space: SearchSpace, n_init: int, rng: np.random.Generator) -> list[DesignPoint]:
    """Uniform draws per real coordinate, uniform integer horizon."""
    pts = []
    for _ in range(n_init):
        pts.append(_random_point(space, rng))
    return pts


def _random_point(space: SearchSpace, rng) -> DesignPoint:
    nt = space.n_theta
    x = rng.uniform(space.lower[:-1], space.upper[:-1])
    Np = int(rng.integers(space.Np_range[0], space.Np_range[1] + 1))
    return DesignPoint(tuple(float(v) for v in x[:nt]), tuple(float(v) for v in x[nt:]), Np)


def ei_from_moments(mean, sigma, J_best):
    """Closed-form expected improvement below ``J_best``; zero where ``sigma == 0``."""
    mean = np.asarray(mean, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    pos = sigma > 0
    safe = np.where(pos, sigma, 1.0)
    diff = J_best - mean
    Z = diff / safe
    cdf = 0.5 * erfc(-Z / SQRT2)
    pdf = INV_SQRT_2PI * np.exp(-0.5 * Z * Z)
    ei = np.where(pos, diff * cdf + safe * pdf, 0.0)
    ei = np.maximum(ei, 0.0)
    return float(ei) if ei.ndim == 0 else ei


def expected_improvement(gp: gpmod.GpSurrogate, x, J_best: float):
    """EI at unit-cube point(s) ``x`` under the GP posterior."""
    m, s2 = gpmod.predict(gp, x)
    return ei_from_moments(m, np.sqrt(s2), J_best)


def _pattern_search(f, u0, f0, iters, step0=0.1, min_step=1e-4):
    """Bounded best-improvement coordinate search with a halving step."""
    d = u0.size
    u, fu, step = u0.copy(), f0, step0
    eye = np.eye(d)
    for _ in range(iters):
        cand = np.clip(np.vstack([u + step * eye, u - step * eye]), 0.0, 1.0)
        vals = f(cand)
        j = int(np.argmax(vals))
        if vals[j] > fu:
            u, fu = cand[j], float(vals[j])
        else:
            step *= 0.5
            if step < min_step:
                break
    return u, fu


def maximize_acquisition(gp: gpmod.GpSurrogate, space: SearchSpace, J_best: float, rng: np.random.Generator,
                         n_probes: int = 2000, n_refine: int = 5, refine_iters: int = 50):
    """Best of uniform probes and pattern-search refinements of the top probes.

    Returns ``(DesignPoint, unit-cube point, EI)``. If EI vanishes everywhere
    probed, falls back to a uniformly random point.
    """
    d = space.dim

    def acq(U):
        return expected_improvement(gp, space.round_unit(U), J_best)

    probes = rng.uniform(size=(n_probes, d))
    vals = acq(probes)
    order = np.argsort(-vals, kind="stable")[:n_refine]
    best_u, best_v = probes[order[0]], float(vals[order[0]])
    if not best_v > 0.0:
        u = rng.uniform(size=d)
        return space.from_unit(u), space.round_unit(u), 0.0
    for i in order:
        u, v = _pattern_search(acq, probes[i], float(vals[i]), refine_iters)
        if v > best_v:
            best_u, best_v = u, v
    best_u = space.round_unit(best_u)
    return space.from_unit(best_u), best_u, best_v


ObjectiveFn = Callable[[DesignPoint, int], tuple[float, str]]


def run_bo(objective: ObjectiveFn, space: SearchSpace, config: BoConfig,
           history: Iterable[BoRecord] = (), callback: Callable[[BoRecord], None] | None = None):
    """Initial random design followed by GP/EI iterations up to ``i_max`` experiments.

    ``objective(point, seed)`` returns ``(cost, status)``; exceptions and
    non-finite costs are recorded at the cap. ``history`` resumes a campaign:
    its records are taken as already evaluated. Returns ``(best point, dataset)``.
    """
    data = BoDataset()
    hyper = None
    for rec in history:
        data.append(rec)
        if rec.hyper is not None:
            hyper = rec.hyper
    if len(data) and [r.index for r in data.records] != list(range(len(data))):
        raise ValueError("history indices must be 0..n-1 in order")

    for i in range(len(data), config.i_max):
        rng = iteration_rng(config.seed, i)
        used_hyper = None
        if i < config.n_init:
            dp = _random_point(space, rng)
        else:
            X = np.array([space.to_unit(r.point) for r in data.records])
            y = data.costs
            hyper, _, _ = gpmod.optimize_hyperparams(X, y, previous=hyper, rng=rng, n_starts=config.hyper_starts)
            used_hyper = hyper
            model = gpmod.fit(X, y, hyper)
            dp, _, _ = maximize_acquisition(model, space, float(y.min()), rng, config.n_probes, config.n_refine, config.refine_iters)

        seed = experiment_seed(config.seed, i)
        try:
            J, status = objective(dp, seed)
            J = float(J)
        except Exception as exc:  # noqa: BLE001 - any failed experiment is recorded, not fatal
            log.warning("objective failed at iteration %d: %s", i, exc)
            J, status = config.cap, "failed"
        if not math.isfinite(J):
            J, status = config.cap, status if status != "completed" else "non-finite"
        best = min(J, data.best().cost) if len(data) else J
        rec = BoRecord(i, dp, J, status, seed, used_hyper, best)
        data.append(rec)
        if callback is not None:
            callback(rec)
        w = config.early_stop_window
        if w and len(data) > w:
            if data.costs[:-w].min() - data.costs.min() <= config.early_stop_tol:
                log.info("no improvement over %d iterations; stopping at %d", w, i + 1)
                break
    return data.best().point, data
