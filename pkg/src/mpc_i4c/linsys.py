"""Linear time-invariant state-space models: PID realization, ZOH sampling,
the controller/model interconnection used for prediction, and simulation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import expm

STABILITY_MARGIN = 1e-9


def _as2d(M, rows=None, cols=None) -> np.ndarray:
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.size == 0 and rows is not None and cols is not None:
        M = np.zeros((rows, cols))
    return M


@dataclass(frozen=True)
class CtStateSpace:
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray

    def __post_init__(self):
        for name in "ABCD":
            object.__setattr__(self, name, _as2d(getattr(self, name)))
        _check_dims(self.A, self.B, self.C, self.D)

    @property
    def n_states(self) -> int:
        return self.A.shape[0]


@dataclass(frozen=True)
class DtStateSpace:
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray
    sample_time: float

    def __post_init__(self):
        for name in "ABCD":
            object.__setattr__(self, name, _as2d(getattr(self, name)))
        _check_dims(self.A, self.B, self.C, self.D)
        if not self.sample_time > 0:
            raise ValueError("sample_time must be positive")

    @property
    def n_states(self) -> int:
        return self.A.shape[0]

    @property
    def n_inputs(self) -> int:
        return self.B.shape[1]

    @property
    def n_outputs(self) -> int:
        return self.C.shape[0]

    def freqresp(self, omega) -> np.ndarray:
        """Transfer matrix at ``z = exp(j omega Ts)`` for each angular frequency.

        Returns an array of shape ``(len(omega), n_outputs, n_inputs)``.
        """
        omega = np.atleast_1d(omega)
        n = self.n_states
        out = np.empty((omega.size, self.n_outputs, self.n_inputs), dtype=complex)
        for i, w in enumerate(omega):
            z = np.exp(1j * w * self.sample_time)
            out[i] = self.C @ np.linalg.solve(z * np.eye(n) - self.A, self.B) + self.D
        return out


def _check_dims(A, B, C, D):
    n = A.shape[0]
    if A.shape != (n, n):
        raise ValueError(f"A must be square, got {A.shape}")
    if B.shape[0] != n or C.shape[1] != n:
        raise ValueError(f"B {B.shape} / C {C.shape} inconsistent with {n} states")
    if D.shape != (C.shape[0], B.shape[1]):
        raise ValueError(f"D must be {(C.shape[0], B.shape[1])}, got {D.shape}")


def dt_ss(A, B, C, D, sample_time) -> DtStateSpace:
    A = _as2d(A)
    B = _as2d(B)
    C = _as2d(C)
    D = _as2d(D, C.shape[0], B.shape[1])
    return DtStateSpace(A, B, C, D, float(sample_time))


@dataclass(frozen=True)
class PidParams:
    theta_P: float
    theta_I: float
    theta_D: float
    N_d: float = 100.0
    Ts: float = 0.005

    def __post_init__(self):
        if not self.N_d > 0:
            raise ValueError("N_d must be positive")
        if not self.Ts > 0:
            raise ValueError("Ts must be positive")


def pid_realization(pid: PidParams) -> DtStateSpace:
    """Controller-form realization of

        K(z) = P + I Ts / (z - 1) + D N_d / (1 + N_d Ts / (z - 1)).

    The derivative term is rewritten as ``D N_d - D N_d^2 Ts / (z - a)`` with
    ``a = 1 - N_d Ts``. State 0 is the running integral of the error, state 1
    the derivative filter state; both are driven by ``Ts * e``.
    """
    Ts, Nd = pid.Ts, pid.N_d
    a = 1.0 - Nd * Ts
    A = np.diag([1.0, a])
    B = np.array([[Ts], [Ts]])
    C = np.array([[pid.theta_I, -pid.theta_D * Nd * Nd]])
    D = np.array([[pid.theta_P + pid.theta_D * Nd]])
    return DtStateSpace(A, B, C, D, Ts)


def pid_tf(pid: PidParams, z) -> np.ndarray:
    """Direct evaluation of the PID transfer function at complex ``z``."""
    z = np.asarray(z, dtype=complex)
    q = 1.0 / (z - 1.0)
    return pid.theta_P + pid.theta_I * pid.Ts * q + pid.theta_D * pid.N_d / (1.0 + pid.N_d * pid.Ts * q)


def c2d_zoh(ct: CtStateSpace, Ts: float) -> DtStateSpace:
    """Zero-order-hold discretization through the exponential of ``[[A, B], [0, 0]] Ts``."""
    if not Ts > 0:
        raise ValueError("Ts must be positive")
    n, m = ct.B.shape
    blk = np.zeros((n + m, n + m))
    blk[:n, :n] = ct.A
    blk[:n, n:] = ct.B
    with np.errstate(all="ignore"):
        E = expm(blk * Ts)
    if not np.all(np.isfinite(E)):
        raise FloatingPointError("non-finite matrix exponential")
    return DtStateSpace(E[:n, :n], E[:n, n:], ct.C.copy(), ct.D.copy(), Ts)


def augment(K: DtStateSpace, My: DtStateSpace) -> DtStateSpace:
    """Map ``g -> [u; y]`` with ``y = My g`` and ``u = K (g - y)``.

    ``My`` must be square (command and output of equal size) and feed ``K``.
    The state is ``[x_My; x_K]``.
    """
    if K.sample_time != My.sample_time:
        raise ValueError("K and My must share the sample time")
    q = My.n_outputs
    if My.n_inputs != q:
        raise ValueError(f"My must be square, got {My.n_outputs}x{My.n_inputs}")
    if K.n_inputs != q:
        raise ValueError(f"K takes {K.n_inputs} inputs, My produces {q}")
    ny, nk = My.n_states, K.n_states
    m = K.n_outputs
    I_D = np.eye(q) - My.D

    A = np.zeros((ny + nk, ny + nk))
    A[:ny, :ny] = My.A
    A[ny:, :ny] = -K.B @ My.C
    A[ny:, ny:] = K.A
    B = np.vstack([My.B, K.B @ I_D])
    C = np.zeros((m + q, ny + nk))
    C[:m, :ny] = -K.D @ My.C
    C[:m, ny:] = K.C
    C[m:, :ny] = My.C
    D = np.vstack([K.D @ I_D, My.D])
    return DtStateSpace(A, B, C, D, K.sample_time)


def select_inputs(m: DtStateSpace, columns) -> DtStateSpace:
    columns = list(columns)
    return DtStateSpace(m.A, m.B[:, columns], m.C, m.D[:, columns], m.sample_time)


def hold_resample(m: DtStateSpace, N: int) -> DtStateSpace:
    """Slow model seen every ``N`` samples with the input held over the block.

    Outputs are read at the first fast sample of each block.
    """
    if N < 1:
        raise ValueError("N must be >= 1")
    n = m.n_states
    Ak = np.eye(n)
    Bsum = np.zeros_like(m.B)
    for _ in range(N):
        Bsum = m.A @ Bsum + m.B
        Ak = m.A @ Ak
    return DtStateSpace(Ak, Bsum, m.C.copy(), m.D.copy(), m.sample_time * N)


def spectral_radius(A) -> float:
    A = np.asarray(A, dtype=float)
    if A.size == 0:
        return 0.0
    if not np.all(np.isfinite(A)):
        return np.inf
    try:
        return float(np.max(np.abs(np.linalg.eigvals(A))))
    except np.linalg.LinAlgError:
        return np.inf


def is_schur_stable(m) -> bool:
    """True when every eigenvalue of ``A`` lies strictly inside the unit circle."""
    A = m.A if hasattr(m, "A") else np.asarray(m)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError("A must be square")
    return spectral_radius(A) < 1.0 - STABILITY_MARGIN


def simulate_lti(m: DtStateSpace, x0, inputs) -> np.ndarray:
    """Output sequence of ``x+ = A x + B g``, ``out = C x + D g``.

    ``inputs`` has one row per step; returns one output row per step.
    """
    U = np.asarray(inputs, dtype=float)
    if U.ndim == 1:
        U = U[:, None]
    if U.shape[1] != m.n_inputs:
        raise ValueError(f"expected {m.n_inputs} input columns, got {U.shape[1]}")
    x = np.zeros(m.n_states) if x0 is None else np.asarray(x0, dtype=float).copy()
    Y = np.empty((U.shape[0], m.n_outputs))
    for k, u in enumerate(U):
        Y[k] = m.C @ x + m.D @ u
        x = m.A @ x + m.B @ u
    return Y
