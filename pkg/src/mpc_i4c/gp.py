"""Gaussian-process regression with an isotropic squared-exponential kernel."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve, cholesky, solve_triangular
from scipy.optimize import minimize

log = logging.getLogger(__name__)

# log-space search box for (sigma0, lambda, sigma_e) in standardized units
LOG_BOUNDS = ((-4.0, 4.0), (-3.0, 2.0), (-6.0, 1.0))
JITTERS = (0.0, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6, 1e-5, 1e-4)
LOG_2PI = math.log(2.0 * math.pi)


class DegenerateKernel(np.linalg.LinAlgError):
    pass


@dataclass(frozen=True)
class GpHyperparams:
    sigma0: float = 1.0
    lam: float = 0.3
    sigma_e: float = 0.1

    def __post_init__(self):
        if not (self.sigma0 > 0 and self.lam > 0 and self.sigma_e > 0):
            raise ValueError("GP hyperparameters must be positive")

    def as_log(self) -> np.ndarray:
        return np.log([self.sigma0, self.lam, self.sigma_e])

    @classmethod
    def from_log(cls, v) -> "GpHyperparams":
        return cls(*(float(math.exp(x)) for x in v))


def sq_dists(X1, X2) -> np.ndarray:
    X1 = np.atleast_2d(X1)
    X2 = np.atleast_2d(X2)
    d = (X1 * X1).sum(1)[:, None] + (X2 * X2).sum(1)[None, :] - 2.0 * X1 @ X2.T
    return np.maximum(d, 0.0)


def se_kernel(x, x2, hyper: GpHyperparams):
    """``sigma0^2 exp(-|x - x2|^2 / (2 lambda^2))``; scalar for vectors, matrix for stacks."""
    x = np.asarray(x, dtype=float)
    x2 = np.asarray(x2, dtype=float)
    if x.shape[-1] != x2.shape[-1]:
        raise ValueError("inputs must have equal dimension")
    if x.ndim == 1 and x2.ndim == 1:
        d = float(np.sum((x - x2) ** 2))
        return hyper.sigma0**2 * math.exp(-d / (2.0 * hyper.lam**2))
    return hyper.sigma0**2 * np.exp(-sq_dists(x, x2) / (2.0 * hyper.lam**2))


def _factor(K, noise_var):
    n = K.shape[0]
    Kn = K + noise_var * np.eye(n)
    scale = max(1.0, float(np.max(np.diag(Kn))))
    for jit in JITTERS:
        try:
            return cholesky(Kn + jit * scale * np.eye(n), lower=True, check_finite=False), jit
        except np.linalg.LinAlgError:
            continue
    raise DegenerateKernel("kernel matrix not positive definite even with jitter 1e-4")


@dataclass
class GpSurrogate:
    X: np.ndarray
    y_std: np.ndarray
    y_mean: float
    y_scale: float
    hyper: GpHyperparams
    chol: np.ndarray
    alpha: np.ndarray
    jitter: float = 0.0

    @property
    def n(self) -> int:
        return self.X.shape[0]

    def predict(self, Xs):
        return predict(self, Xs)


def standardize(costs):
    y = np.asarray(costs, dtype=float).ravel()
    mean = float(y.mean())
    scale = float(y.std())
    if not scale > 1e-12:
        scale = 1.0
    return (y - mean) / scale, mean, scale


def fit(points, costs, hyper: GpHyperparams) -> GpSurrogate:
    """Condition the GP on normalized ``points`` and raw ``costs``.

    Costs are standardized internally; predictions come back in cost units.
    """
    X = np.atleast_2d(np.asarray(points, dtype=float))
    if X.shape[0] < 1:
        raise ValueError("need at least one observation")
    if not np.all(np.isfinite(costs)):
        raise ValueError("costs must be finite")
    y, mean, scale = standardize(costs)
    K = se_kernel(X, X, hyper)
    L, jit = _factor(K, hyper.sigma_e**2)
    alpha = cho_solve((L, True), y, check_finite=False)
    return GpSurrogate(X, y, mean, scale, hyper, L, alpha, jit)


def predict(gp: GpSurrogate, Xs):
    """Posterior mean and variance at ``Xs`` in cost units.

    The variance includes the observation noise ``sigma_e^2``.
    """
    Xs = np.asarray(Xs, dtype=float)
    single = Xs.ndim == 1
    Xs = np.atleast_2d(Xs)
    h = gp.hyper
    ks = se_kernel(Xs, gp.X, h)
    m = ks @ gp.alpha
    v = solve_triangular(gp.chol, ks.T, lower=True, check_finite=False)
    var = h.sigma0**2 - np.sum(v * v, axis=0) + h.sigma_e**2
    var = np.maximum(var, 0.0)
    mean = gp.y_mean + gp.y_scale * m
    var = gp.y_scale**2 * var
    if single:
        return float(mean[0]), float(var[0])
    return mean, var


def _lml_std(D2, y, log_hyper) -> float:
    s0, lam, se = np.exp(log_hyper)
    K = s0 * s0 * np.exp(-D2 / (2.0 * lam * lam))
    try:
        L, _ = _factor(K, se * se)
    except DegenerateKernel:
        return -np.inf
    a = cho_solve((L, True), y, check_finite=False)
    return float(-np.sum(np.log(np.diag(L))) - 0.5 * y @ a - 0.5 * y.size * LOG_2PI)


def log_marginal_likelihood(points, costs, hyper: GpHyperparams, standardized: bool = False) -> float:
    """``-1/2 log det(K + s_e^2 I) - 1/2 y'(K + s_e^2 I)^-1 y - n/2 log(2 pi)``.

    ``costs`` are used as given unless ``standardized`` is requested.
    """
    X = np.atleast_2d(np.asarray(points, dtype=float))
    y = np.asarray(costs, dtype=float).ravel()
    if standardized:
        y = standardize(y)[0]
    return _lml_std(sq_dists(X, X), y, hyper.as_log())


def optimize_hyperparams(points, costs, previous: GpHyperparams | None = None, rng=None, n_starts: int = 8, maxfev: int = 150):
    """Maximize the log marginal likelihood of the standardized costs.

    Multi-start bounded Nelder-Mead in log space; the first start is
    ``previous`` (clipped into the box). Returns ``(hyper, lml, ok)``; when no
    start produces a finite likelihood, ``previous`` comes back with ``ok=False``.
    """
    X = np.atleast_2d(np.asarray(points, dtype=float))
    if X.shape[0] < 2:
        raise ValueError("need at least two observations")
    y = standardize(costs)[0]
    D2 = sq_dists(X, X)
    lo = np.array([b[0] for b in LOG_BOUNDS])
    hi = np.array([b[1] for b in LOG_BOUNDS])
    rng = np.random.default_rng(0) if rng is None else rng
    prev = previous or GpHyperparams()
    starts = [np.clip(prev.as_log(), lo, hi)]
    starts += [rng.uniform(lo, hi) for _ in range(n_starts - 1)]

    def neg(v):
        v = np.clip(v, lo, hi)
        val = _lml_std(D2, y, v)
        return -val if math.isfinite(val) else 1e300

    best_v, best_f = None, np.inf
    for s in starts:
        f0 = neg(s)
        res = minimize(neg, s, method="Nelder-Mead", bounds=list(zip(lo, hi)),
                       options={"maxfev": maxfev, "xatol": 1e-3, "fatol": 1e-6})
        v, f = (np.clip(res.x, lo, hi), res.fun) if res.fun <= f0 else (s, f0)
        if f < best_f:
            best_v, best_f = v, f
    if best_v is None or best_f >= 1e300:
        log.warning("hyperparameter search failed; keeping previous values")
        return prev, -np.inf, False
    return GpHyperparams.from_log(best_v), -best_f, True
