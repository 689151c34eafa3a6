"""Dense convex QP solver (primal active set) for small condensed MPC problems.

Problem form::

    minimize    0.5 z'Hz + f'z
    subject to  G z <= h,   A_eq z = b_eq
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog

log = logging.getLogger(__name__)

KKT_TOL = 1e-6


@dataclass
class QpProblem:
    H: np.ndarray
    f: np.ndarray
    G: np.ndarray
    h: np.ndarray
    A_eq: np.ndarray | None = None
    b_eq: np.ndarray | None = None
    # Index of a scalar slack whose column in G is <= 0 everywhere; raising it
    # makes any point feasible, so no phase-1 is needed.
    slack_index: int | None = None

    def __post_init__(self):
        self.H = np.atleast_2d(np.asarray(self.H, dtype=float))
        self.f = np.asarray(self.f, dtype=float).ravel()
        n = self.f.size
        self.G = np.asarray(self.G, dtype=float).reshape(-1, n)
        self.h = np.asarray(self.h, dtype=float).ravel()
        if self.A_eq is None:
            self.A_eq = np.zeros((0, n))
            self.b_eq = np.zeros(0)
        else:
            self.A_eq = np.asarray(self.A_eq, dtype=float).reshape(-1, n)
            self.b_eq = np.asarray(self.b_eq, dtype=float).ravel()
        if self.H.shape != (n, n):
            raise ValueError(f"H must be {n}x{n}")
        if self.h.size != self.G.shape[0] or self.b_eq.size != self.A_eq.shape[0]:
            raise ValueError("constraint right-hand sides do not match")

    @property
    def n(self) -> int:
        return self.f.size

    def objective(self, z) -> float:
        return float(0.5 * z @ self.H @ z + self.f @ z)


@dataclass
class QpSolution:
    z: np.ndarray
    objective: float
    stationarity: float
    primal: float
    complementarity: float
    iterations: int
    status: str  # "success" | "max-iter"
    active: list[int] = field(default_factory=list)
    multipliers: np.ndarray | None = None  # one per row of G, zero when inactive

    @property
    def ok(self) -> bool:
        return self.status == "success"


def _independent_rows(G, rows, base=None, tol=1e-10):
    """Greedy subset of ``rows`` whose constraint normals are linearly independent."""
    keep = []
    basis = np.zeros((0, G.shape[1])) if base is None else base
    for i in rows:
        cand = np.vstack([basis, G[i]])
        if cand.shape[0] <= G.shape[1] and np.linalg.matrix_rank(cand, tol=tol * max(1.0, np.abs(cand).max())) == cand.shape[0]:
            basis = cand
            keep.append(i)
    return keep


def _phase_one(qp: QpProblem, z0):
    if qp.slack_index is not None:
        z = z0.copy()
        col = qp.G[:, qp.slack_index]
        viol = qp.G @ z - qp.h
        need = col < 0
        if np.any(viol[need] > 0):
            z[qp.slack_index] += np.max(viol[need] / -col[need])
        if np.all(qp.G @ z - qp.h <= 1e-12 * (1 + np.abs(qp.h))) and qp.A_eq.shape[0] == 0:
            return z
    res = linprog(
        np.zeros(qp.n),
        A_ub=qp.G if qp.G.shape[0] else None,
        b_ub=qp.h if qp.G.shape[0] else None,
        A_eq=qp.A_eq if qp.A_eq.shape[0] else None,
        b_eq=qp.b_eq if qp.A_eq.shape[0] else None,
        bounds=[(None, None)] * qp.n,
        method="highs",
    )
    if res.status != 0:
        raise ValueError(f"QP has no feasible point: {res.message}")
    return res.x


def _kkt_solve(H, Aw, rhs_top):
    n = H.shape[0]
    k = Aw.shape[0]
    K = np.zeros((n + k, n + k))
    K[:n, :n] = H
    K[:n, n:] = Aw.T
    K[n:, :n] = Aw
    rhs = np.concatenate([rhs_top, np.zeros(k)])
    try:
        sol = np.linalg.solve(K, rhs)
        # one step of iterative refinement; H can be badly scaled
        sol += np.linalg.solve(K, rhs - K @ sol)
    except np.linalg.LinAlgError:
        sol = np.linalg.lstsq(K, rhs, rcond=None)[0]
    return sol[:n], sol[n:]


def kkt_residuals(qp: QpProblem, z, lam_ineq, nu_eq=None):
    """Infinity-norm stationarity, primal infeasibility and complementarity."""
    nu_eq = np.zeros(qp.A_eq.shape[0]) if nu_eq is None else nu_eq
    grad = qp.H @ z + qp.f + qp.G.T @ lam_ineq + qp.A_eq.T @ nu_eq
    slack = qp.h - qp.G @ z
    stat = float(np.max(np.abs(grad))) if grad.size else 0.0
    prim = 0.0
    if slack.size:
        prim = max(prim, float(np.max(np.maximum(-slack, 0.0))))
    if qp.A_eq.shape[0]:
        prim = max(prim, float(np.max(np.abs(qp.A_eq @ z - qp.b_eq))))
    comp = float(np.max(np.abs(lam_ineq * slack))) if slack.size else 0.0
    return stat, prim, comp


def solve_qp(qp: QpProblem, warm_start=None, active_set=None, tol: float = KKT_TOL, max_iter: int | None = None) -> QpSolution:
    """Primal active-set method from a feasible start.

    ``warm_start`` is an initial guess for ``z`` (made feasible by lifting the
    slack or, failing that, by a phase-1 LP); ``active_set`` seeds the working
    set with constraint indices that are active at the start point.
    """
    n = qp.n
    m = qp.G.shape[0]
    me = qp.A_eq.shape[0]
    if max_iter is None:
        max_iter = 50 * max(1, m + me)

    z = np.zeros(n) if warm_start is None else np.asarray(warm_start, dtype=float).copy()
    if np.any(qp.G @ z - qp.h > 1e-12 * (1 + np.abs(qp.h))) or (me and np.any(np.abs(qp.A_eq @ z - qp.b_eq) > 1e-12)):
        z = _phase_one(qp, z)

    scale = 1.0 + np.abs(qp.h)
    if active_set:
        act_tol = 1e-9 * scale
        cand = [i for i in active_set if 0 <= i < m and abs(qp.G[i] @ z - qp.h[i]) <= act_tol[i]]
        W = _independent_rows(qp.G, cand, base=qp.A_eq)
    else:
        W = []

    hscale = max(1.0, float(np.max(np.abs(qp.H))) if qp.H.size else 1.0)
    row_norm1 = np.abs(qp.G).sum(axis=1)
    status = "max-iter"
    lam_w = np.zeros(0)
    nu = np.zeros(me)
    it = 0
    at_min = False
    for it in range(1, max_iter + 1):
        Aw = np.vstack([qp.A_eq, qp.G[W]]) if W else qp.A_eq
        grad = qp.H @ z + qp.f
        p, mult = _kkt_solve(qp.H, Aw, -grad)
        nu = mult[:me]
        lam_w = mult[me:]
        # after an unblocked full step z already minimizes over the working
        # set; what is left of p is rounding noise from an ill-scaled H
        if at_min or np.max(np.abs(p), initial=0.0) <= 1e-13 * (1.0 + np.max(np.abs(z), initial=0.0)):
            at_min = False
            dual_tol = 1e-12 * hscale * (1.0 + np.max(np.abs(z), initial=0.0))
            if lam_w.size == 0 or lam_w.min() >= -dual_tol:
                status = "success"
                break
            W.pop(int(np.argmin(lam_w)))
            continue
        alpha = 1.0
        block = None
        if m:
            Gp = qp.G @ p
            mask = Gp > 1e-14 * row_norm1 * np.abs(p).max()
            mask[W] = False
            if mask.any():
                idx = np.flatnonzero(mask)
                ratios = (qp.h[idx] - qp.G[idx] @ z) / Gp[idx]
                j = int(np.argmin(ratios))
                if ratios[j] < 1.0:
                    alpha = max(float(ratios[j]), 0.0)
                    block = int(idx[j])
        z = z + alpha * p
        if block is not None:
            W.append(block)
        else:
            at_min = True

    lam = np.zeros(m)
    if W and lam_w.size == len(W):
        lam[W] = np.maximum(lam_w, 0.0)
    stat, prim, comp = kkt_residuals(qp, z, lam, nu)
    if status == "success" and max(stat, prim, comp) > tol:
        log.debug("active set converged with residuals %.2e %.2e %.2e", stat, prim, comp)
    if status != "success":
        log.warning("QP hit iteration cap (%d)", max_iter)
    return QpSolution(
        z=z,
        objective=qp.objective(z),
        stationarity=stat,
        primal=prim,
        complementarity=comp,
        iterations=it,
        status=status,
        active=list(W),
        multipliers=lam,
    )
