"""Condensed receding-horizon MPC with a single softening slack and move blocking.

Decision vector: ``z = [g_0, ..., g_{Nu-1}, eps]`` where ``g_k`` is the
command held over MPC interval ``k`` (``g_0`` is applied now) and moves past
``Nu - 1`` repeat ``g_{Nu-1}``. Predicted outputs are read at the start of
intervals ``k = 1..Np``. The model's outputs are ordered ``[u; y]``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .linsys import DtStateSpace
from .qp import QpProblem, QpSolution, solve_qp

# Tikhonov term on the command block; keeps H positive definite when the
# candidate model has no influence from g.
G_REGULARIZATION = 1e-8


def _vec(x, n):
    a = np.asarray(x, dtype=float).ravel()
    if a.size == 1:
        a = np.full(n, a.item())
    if a.size != n:
        raise ValueError(f"expected {n} entries, got {a.size}")
    return a


@dataclass
class MpcWeights:
    Q_y: np.ndarray | float = 0.1
    Q_u: np.ndarray | float = 0.0
    Q_du: np.ndarray | float = 0.1
    Q_eps: float = 1e5
    V_y: np.ndarray | float = 1.0
    V_u: np.ndarray | float = 1.0
    V_du: np.ndarray | float = 1.0

    def __post_init__(self):
        for name in ("Q_y", "Q_u", "Q_du"):
            if np.any(np.asarray(getattr(self, name)) < 0):
                raise ValueError(f"{name} must be non-negative")
        if not self.Q_eps > 0:
            raise ValueError("Q_eps must be positive")
        for name in ("V_y", "V_u", "V_du"):
            if np.any(np.asarray(getattr(self, name)) <= 0):
                raise ValueError(f"{name} must be positive")


@dataclass
class MpcConfig:
    Np: int
    Nu: int
    weights: MpcWeights = field(default_factory=MpcWeights)
    y_min: np.ndarray | float = -np.inf
    y_max: np.ndarray | float = np.inf
    u_min: np.ndarray | float = -np.inf
    u_max: np.ndarray | float = np.inf
    du_min: np.ndarray | float = -np.inf
    du_max: np.ndarray | float = np.inf
    u_ref: np.ndarray | float = 0.0
    T_mpc: float = 0.05
    n_u: int = 1
    n_y: int = 1

    def __post_init__(self):
        if not 1 <= self.Nu <= self.Np:
            raise ValueError(f"need 1 <= Nu <= Np, got Nu={self.Nu}, Np={self.Np}")
        if not self.T_mpc > 0:
            raise ValueError("T_mpc must be positive")
        for lo, hi in (("y_min", "y_max"), ("u_min", "u_max"), ("du_min", "du_max")):
            n = self.n_y if lo[0] == "y" else self.n_u
            a, b = _vec(getattr(self, lo), n), _vec(getattr(self, hi), n)
            if np.any(a >= b):
                raise ValueError(f"{lo} must be below {hi}")
            setattr(self, lo, a)
            setattr(self, hi, b)
        self.u_ref = _vec(self.u_ref, self.n_u)


@dataclass
class Prediction:
    """Stacked outputs ``Y = Phi x + Gamma g`` over ``k = 1..Np`` (rows grouped by step)."""

    Phi: np.ndarray
    Gamma: np.ndarray
    Np: int
    Nu: int
    n_out: int
    n_in: int


def build_prediction(model: DtStateSpace, Np: int, Nu: int) -> Prediction:
    if not 1 <= Nu <= Np:
        raise ValueError("need 1 <= Nu <= Np")
    A, B, C, D = model.A, model.B, model.C, model.D
    n, m = B.shape
    q = C.shape[0]
    Phi = np.zeros((Np * q, n))
    Gamma = np.zeros((Np * q, Nu * m))
    # column block of the move active during interval j after blocking
    blk = [min(j, Nu - 1) for j in range(Np + 1)]
    Ak = np.eye(n)
    # X_k = A^k x + sum_j A^{k-1-j} B g_j, kept as the input map of the state
    Sx = np.zeros((n, Nu * m))
    for k in range(1, Np + 1):
        j = k - 1
        Sx = A @ Sx
        Sx[:, blk[j] * m:(blk[j] + 1) * m] += B
        Ak = A @ Ak
        rows = slice((k - 1) * q, k * q)
        Phi[rows] = C @ Ak
        Gamma[rows] = C @ Sx
        Gamma[rows, blk[k] * m:(blk[k] + 1) * m] += D
    return Prediction(Phi, Gamma, Np, Nu, q, m)


class CondensedMpc:
    """Precomputed QP data for one prediction model and configuration.

    Only the gradient and the constraint right-hand side depend on the current
    state, previous input and reference; both are affine and cached as such.
    """

    def __init__(self, pred: Prediction, config: MpcConfig):
        if pred.n_out != config.n_u + config.n_y:
            raise ValueError("model outputs must be [u; y] matching the configured sizes")
        self.pred = pred
        self.config = config
        Np, nu, ny, q = pred.Np, config.n_u, config.n_y, pred.n_out
        w = config.weights
        nz = pred.Nu * pred.n_in
        self.n_moves = nz
        self.eps_index = nz

        # both channels over k = 1..Np; the feedthrough of the move applied
        # now reaches u only through later samples
        u_rows = (np.arange(nu) + q * np.arange(Np)[:, None]).ravel()
        y_rows = (np.arange(nu, q) + q * np.arange(Np)[:, None]).ravel()
        Pu, Gu = pred.Phi[u_rows], pred.Gamma[u_rows]
        Py, Gy = pred.Phi[y_rows], pred.Gamma[y_rows]
        # first difference: dU = S U - E u_prev
        S = np.eye(Np * nu) - np.eye(Np * nu, k=-nu)
        E = np.zeros((Np * nu, nu))
        E[:nu] = np.eye(nu)
        Pd, Gd = S @ Pu, S @ Gu

        Wy = np.tile(_vec(w.Q_y, ny), Np)
        Wu = np.tile(_vec(w.Q_u, nu), Np)
        Wd = np.tile(_vec(w.Q_du, nu), Np)

        H = np.zeros((nz + 1, nz + 1))
        H[:nz, :nz] = 2.0 * (Gy.T @ (Wy[:, None] * Gy) + Gu.T @ (Wu[:, None] * Gu) + Gd.T @ (Wd[:, None] * Gd))
        H[:nz, :nz] += 2.0 * G_REGULARIZATION * np.eye(nz)
        H[nz, nz] = 2.0 * w.Q_eps
        self.H = 0.5 * (H + H.T)

        # gradient pieces: f_g = 2 (Gy' Wy (Py x - R) + Gu' Wu (Pu x - Uref) + Gd' Wd (Pd x - E u_prev))
        self._Py, self._Pu, self._Pd, self._E = Py, Pu, Pd, E
        self._GyW = 2.0 * Gy.T * Wy
        self._GuW = 2.0 * Gu.T * Wu
        self._GdW = 2.0 * Gd.T * Wd
        self._Wy, self._Wu, self._Wd = Wy, Wu, Wd
        self._uref = np.tile(config.u_ref, Np)

        # inequality rows: (map of g, slack weight, state map, u_prev map, constant, reference-dependent?)
        G_rows, h_const, h_x, h_u = [], [], [], []

        def add(gmap, pmap, umap, bound, V, sign):
            # sign=+1: gmap z + pmap x - umap u <= bound + V eps
            finite = np.isfinite(bound)
            if not finite.any():
                return
            G_rows.append(np.hstack([sign * gmap[finite], -V[finite, None]]))
            h_const.append(sign * bound[finite])
            h_x.append(-sign * pmap[finite])
            h_u.append(sign * umap[finite])

        y_max = np.tile(config.y_max, Np)
        y_min = np.tile(config.y_min, Np)
        u_max = np.tile(config.u_max, Np)
        u_min = np.tile(config.u_min, Np)
        d_max = np.tile(config.du_max, Np)
        d_min = np.tile(config.du_min, Np)
        Vy = np.tile(_vec(w.V_y, ny), Np)
        Vu = np.tile(_vec(w.V_u, nu), Np)
        Vd = np.tile(_vec(w.V_du, nu), Np)
        zero_u = np.zeros((Np * nu, nu))
        zero_y = np.zeros((Np * ny, nu))
        add(Gy, Py, zero_y, y_max, Vy, +1)
        add(Gy, Py, zero_y, y_min, Vy, -1)
        add(Gu, Pu, zero_u, u_max, Vu, +1)
        add(Gu, Pu, zero_u, u_min, Vu, -1)
        add(Gd, Pd, E, d_max, Vd, +1)
        add(Gd, Pd, E, d_min, Vd, -1)
        eps_row = np.zeros((1, nz + 1))
        eps_row[0, nz] = -1.0
        G_rows.append(eps_row)
        h_const.append(np.zeros(1))
        h_x.append(np.zeros((1, pred.Phi.shape[1])))
        h_u.append(np.zeros((1, nu)))
        self.G = np.vstack(G_rows)
        self._h0 = np.concatenate(h_const)
        self._hx = np.vstack(h_x)
        self._hu = np.vstack(h_u)

    def is_finite(self) -> bool:
        """False when the model overflowed somewhere in the precomputed data."""
        parts = (self.H, self.G, self._h0, self._hx, self._hu, self._GyW, self._GuW, self._GdW)
        return all(np.all(np.isfinite(a)) for a in parts)

    def qp(self, x, u_prev, r) -> QpProblem:
        """QP for state ``x``, last applied input ``u_prev`` and reference rows ``r`` (Np x n_y)."""
        Np, ny = self.pred.Np, self.config.n_y
        x = np.asarray(x, dtype=float)
        u_prev = np.atleast_1d(np.asarray(u_prev, dtype=float))
        R = np.broadcast_to(np.asarray(r, dtype=float), (Np, ny)).ravel()
        fg = (
            self._GyW @ (self._Py @ x - R)
            + self._GuW @ (self._Pu @ x - self._uref)
            + self._GdW @ (self._Pd @ x - self._E @ u_prev)
        )
        f = np.append(fg, 0.0)
        h = self._h0 + self._hx @ x + self._hu @ u_prev
        return QpProblem(self.H, f, self.G, h, slack_index=self.eps_index)

    def tracking_constant(self, x, u_prev, r) -> float:
        """Cost at ``z = 0``; adds to the QP objective to give the full MPC cost."""
        Np, ny = self.pred.Np, self.config.n_y
        R = np.broadcast_to(np.asarray(r, dtype=float), (Np, ny)).ravel()
        ey = self._Py @ x - R
        eu = self._Pu @ x - self._uref
        ed = self._Pd @ x - self._E @ np.atleast_1d(u_prev)
        return float(ey @ (self._Wy * ey) + eu @ (self._Wu * eu) + ed @ (self._Wd * ed))

    def moves(self, z) -> np.ndarray:
        """Full ``Np``-long command sequence implied by ``z`` (blocking applied)."""
        m = self.pred.n_in
        g = np.asarray(z)[: self.n_moves].reshape(self.pred.Nu, m)
        idx = [min(k, self.pred.Nu - 1) for k in range(self.pred.Np)]
        return g[idx]


def build_qp(pred: Prediction, config: MpcConfig, xi, u_prev, r) -> QpProblem:
    return CondensedMpc(pred, config).qp(xi, u_prev, r)


@dataclass
class MpcStepInfo:
    g: np.ndarray
    epsilon: float
    status: str
    iterations: int


class MpcController:
    """Receding-horizon loop around :class:`CondensedMpc` with warm starts.

    The prediction model state is ``[y; controller state]``; the output model
    uses ``C = I`` so the measured output stands in for its state.
    """

    def __init__(self, model: DtStateSpace, config: MpcConfig):
        self.model = model
        self.config = config
        self.problem = CondensedMpc(build_prediction(model, config.Np, config.Nu), config)
        self._z = None
        self._active: list[int] = []

    def reset(self):
        self._z = None
        self._active = []

    def _warm(self):
        if self._z is None:
            return None, None
        m = self.problem.pred.n_in
        nz = self.problem.n_moves
        g = self._z[:nz].reshape(-1, m)
        shifted = np.vstack([g[1:], g[-1:]]).ravel()
        return np.append(shifted, self._z[nz]), self._active

    def step(self, y_meas, inner_state, u_prev, r) -> MpcStepInfo:
        xi = np.concatenate([np.atleast_1d(y_meas), np.atleast_1d(inner_state)])
        qp = self.problem.qp(xi, u_prev, r)
        z0, act = self._warm()
        sol: QpSolution = solve_qp(qp, warm_start=z0, active_set=act)
        self._z = sol.z
        self._active = sol.active
        m = self.problem.pred.n_in
        return MpcStepInfo(g=sol.z[:m].copy(), epsilon=float(sol.z[self.problem.eps_index]), status=sol.status, iterations=sol.iterations)


def mpc_step(controller: MpcController, y_meas, inner_state, u_prev, r) -> MpcStepInfo:
    return controller.step(y_meas, inner_state, u_prev, r)
