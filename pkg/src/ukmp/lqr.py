"""LQR gains for a unit point mass from KMP covariance predictions.

The end-effector is a double integrator ``d/dt [x, v] = A [x, v] + B u`` with
acceleration command ``u``. Gains are returned as a stiffness/damping pair so
that ``u = Kp (x_target - x) + Kv (v_target - v)``.

Infinite-horizon gains solve the continuous algebraic Riccati equation by
Kleinman-Newton iteration. Finite-horizon gains run the discrete Riccati
recursion on the exact zero-order-hold discretization of the plant.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.linalg import (expm, null_space, solve_continuous_lyapunov,
                          solve_discrete_lyapunov)
from scipy.signal import place_poles

from .errors import (ConvergenceError, FactorizationError, NotDetectableError,
                     NumericalError, ValidationError)

MAX_ITER = 200
RTOL = 1e-10


@dataclass(frozen=True)
class LinearSystem:
    A: np.ndarray
    B: np.ndarray

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        B = np.asarray(self.B, dtype=float)
        if B.ndim == 1:
            B = B[:, None]
        if A.shape[0] != A.shape[1] or B.shape[0] != A.shape[0]:
            raise ValidationError(f"incompatible system shapes A{A.shape}, B{B.shape}")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)

    @property
    def n_states(self) -> int:
        return self.A.shape[0]

    @property
    def n_controls(self) -> int:
        return self.B.shape[1]


@dataclass(frozen=True)
class ControlGains:
    """Stiffness ``Kp`` and damping ``Kv``; ``riccati`` is the cost-to-go matrix."""

    Kp: np.ndarray
    Kv: np.ndarray
    riccati: np.ndarray | None = field(default=None, compare=False, repr=False)

    @property
    def K(self) -> np.ndarray:
        return np.hstack([self.Kp, self.Kv])

    @classmethod
    def from_matrix(cls, K, riccati=None):
        n_c = K.shape[0]
        if K.shape[1] != 2 * n_c:
            raise ValidationError("gain matrix must be N_C x 2 N_C to split into Kp/Kv")
        return cls(Kp=K[:, :n_c].copy(), Kv=K[:, n_c:].copy(), riccati=riccati)


def double_integrator(n_c: int) -> LinearSystem:
    if n_c < 1:
        raise ValidationError("n_c must be >= 1")
    eye, zero = np.eye(n_c), np.zeros((n_c, n_c))
    A = np.block([[zero, eye], [zero, zero]])
    B = np.vstack([zero, eye])
    return LinearSystem(A, B)


def controllability_matrix(system: LinearSystem) -> np.ndarray:
    blocks = [system.B]
    for _ in range(system.n_states - 1):
        blocks.append(system.A @ blocks[-1])
    return np.hstack(blocks)


def is_controllable(system: LinearSystem) -> bool:
    return np.linalg.matrix_rank(controllability_matrix(system)) == system.n_states


def _sym(m):
    return 0.5 * (m + m.T)


def _check_weights(Q, R, n_s, n_c):
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    R = np.atleast_2d(np.asarray(R, dtype=float))
    if Q.shape != (n_s, n_s) or R.shape != (n_c, n_c):
        raise ValidationError(f"weights have shapes Q{Q.shape}, R{R.shape}; "
                              f"expected ({n_s},{n_s}) and ({n_c},{n_c})")
    for name, M in (("Q", Q), ("R", R)):
        if not np.all(np.isfinite(M)):
            raise ValidationError(f"{name} has non-finite entries")
        if np.max(np.abs(M - M.T)) > 1e-10 * max(1.0, np.max(np.abs(M))):
            raise ValidationError(f"{name} is not symmetric")
    if np.linalg.eigvalsh(_sym(R))[0] <= 0:
        raise ValidationError("R must be positive-definite")
    if np.linalg.eigvalsh(_sym(Q))[0] < -1e-12 * max(1.0, np.max(np.abs(Q))):
        raise ValidationError("Q must be positive-semidefinite")
    return _sym(Q), _sym(R)


def weight_from_cov(cov, velocity_weight: float = 0.0) -> np.ndarray:
    """State weight ``blockdiag(cov^-1, velocity_weight * I)``."""
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    if velocity_weight < 0:
        raise ValidationError("velocity_weight must be non-negative")
    d = cov.shape[0]
    try:
        chol = np.linalg.cholesky(_sym(cov))
    except np.linalg.LinAlgError as exc:
        raise FactorizationError(
            "covariance is singular or indefinite; inspect the KMP model that produced it") from exc
    inv_chol = np.linalg.solve(chol, np.eye(d))
    precision = inv_chol.T @ inv_chol
    Q = np.zeros((2 * d, 2 * d))
    Q[:d, :d] = _sym(precision)
    Q[d:, d:] = velocity_weight * np.eye(d)
    return Q


def care_residual(A, B, Q, R, P) -> np.ndarray:
    return A.T @ P + P @ A - P @ B @ np.linalg.solve(R, B.T @ P) + Q


def dare_residual(A, B, Q, R, P) -> np.ndarray:
    BtPA = B.T @ P @ A
    return A.T @ P @ A - P - BtPA.T @ np.linalg.solve(R + B.T @ P @ B, BtPA) + Q


def check_detectable(A, Q, tol=1e-10):
    """Raise :class:`NotDetectableError` unless (A, Q^1/2) is detectable.

    The unobservable subspace is the null space of the observability matrix;
    A restricted to it must be Hurwitz.
    """
    n = A.shape[0]
    w, v = np.linalg.eigh(_sym(Q))
    C = (v * np.sqrt(np.clip(w, 0.0, None))) @ v.T
    blocks = [C]
    for _ in range(n - 1):
        blocks.append(blocks[-1] @ A)
    unobs = null_space(np.vstack(blocks), rcond=tol)
    if unobs.shape[1] == 0:
        return
    restricted = unobs.T @ A @ unobs
    eig = np.linalg.eigvals(restricted)
    if np.any(eig.real >= -1e-12):
        basis = np.array2string(unobs.T, precision=3, suppress_small=True)
        raise NotDetectableError(
            "Q leaves non-decaying modes unobserved (eigenvalues "
            f"{np.round(eig, 6)}); unobserved subspace basis rows:\n{basis}")


def _is_hurwitz(M):
    return bool(np.all(np.linalg.eigvals(M).real < 0))


def _stabilizing_gain(system: LinearSystem) -> np.ndarray:
    poles = -np.arange(1, system.n_states + 1, dtype=float)
    return place_poles(system.A, system.B, poles).gain_matrix


def solve_care(A, B, Q, R, initial_gain=None, max_iter=MAX_ITER, rtol=RTOL):
    """Stabilizing solution of ``A'P + PA - PBR^-1B'P + Q = 0``.

    Kleinman-Newton: each step solves a Lyapunov equation for the current
    closed loop. ``initial_gain`` must be stabilizing if given; otherwise a
    pole-placement gain is used. Returns ``(P, K)`` with ``K = R^-1 B' P``.
    """
    system = LinearSystem(A, B)
    A, B = system.A, system.B
    Q, R = _check_weights(Q, R, system.n_states, system.n_controls)
    check_detectable(A, Q)
    if initial_gain is not None and _is_hurwitz(A - B @ initial_gain):
        K = np.asarray(initial_gain, dtype=float)
    else:
        K = _stabilizing_gain(system)
    qnorm = max(np.linalg.norm(Q), np.finfo(float).tiny)
    residual = np.inf

    def newton_step(K):
        closed = A - B @ K
        P = _sym(solve_continuous_lyapunov(closed.T, -(Q + K.T @ R @ K)))
        return P, np.linalg.solve(R, B.T @ P)

    for _ in range(max_iter):
        P, K = newton_step(K)
        residual = np.linalg.norm(care_residual(A, B, Q, R, P)) / qnorm
        if not np.all(np.isfinite(P)):
            raise NumericalError("Riccati iteration diverged")
        if residual < rtol:
            # one more quadratically convergent step costs one Lyapunov solve
            # and removes the error left at the stopping threshold
            return newton_step(K)
    raise ConvergenceError(
        f"CARE iteration did not converge in {max_iter} steps (relative residual {residual:.3e})")


def infinite_horizon_gains(system: LinearSystem, Q, R, initial_gains: ControlGains | None = None
                           ) -> ControlGains:
    """Continuous-time LQR gains for a regulator around the current target."""
    init = initial_gains.K if initial_gains is not None else None
    P, K = solve_care(system.A, system.B, Q, R, initial_gain=init)
    return ControlGains.from_matrix(K, riccati=P)


def zoh_discretize(system: LinearSystem, dt: float) -> tuple[np.ndarray, np.ndarray]:
    """Exact zero-order-hold discretization ``(Ad, Bd)``."""
    if dt <= 0:
        raise ValidationError("dt must be positive")
    n, m = system.n_states, system.n_controls
    aug = np.zeros((n + m, n + m))
    aug[:n, :n] = system.A
    aug[:n, n:] = system.B
    e = expm(aug * dt)
    return e[:n, :n], e[:n, n:]


def solve_dare(Ad, Bd, Q, R, max_iter=MAX_ITER, rtol=RTOL):
    """Stabilizing DARE solution by Hewer's iteration. Returns ``(P, K)``."""
    Ad = np.asarray(Ad, dtype=float)
    Bd = np.asarray(Bd, dtype=float)
    Q, R = _check_weights(Q, R, Ad.shape[0], Bd.shape[1])
    poles = np.linspace(0.5, 0.9, Ad.shape[0])
    K = place_poles(Ad, Bd, poles).gain_matrix
    qnorm = max(np.linalg.norm(Q), np.finfo(float).tiny)
    residual = np.inf
    for _ in range(max_iter):
        closed = Ad - Bd @ K
        P = _sym(solve_discrete_lyapunov(closed.T, Q + K.T @ R @ K))
        K = np.linalg.solve(R + Bd.T @ P @ Bd, Bd.T @ P @ Ad)
        residual = np.linalg.norm(dare_residual(Ad, Bd, Q, R, P)) / qnorm
        if residual < rtol:
            return P, K
    raise ConvergenceError(
        f"DARE iteration did not converge in {max_iter} steps (relative residual {residual:.3e})")


def discrete_infinite_horizon_gains(system: LinearSystem, Q, R, dt: float) -> ControlGains:
    """Steady-state gains of the ZOH-discretized problem with per-step costs Q, R."""
    Ad, Bd = zoh_discretize(system, dt)
    P, K = solve_dare(Ad, Bd, Q, R)
    return ControlGains.from_matrix(K, riccati=P)


def finite_horizon_gains(system: LinearSystem, Q_sequence: Sequence, R, dt: float,
                         terminal_Q=None) -> list[ControlGains]:
    """Time-varying gains from the backward discrete Riccati recursion.

    ``Q_sequence[t]`` and ``R`` are per-step costs on the ZOH-discretized
    plant. The recursion starts from ``terminal_Q`` (default: the last
    element of ``Q_sequence``); gain ``t`` uses the cost-to-go of step t+1.
    """
    if len(Q_sequence) < 1:
        raise ValidationError("Q_sequence must contain at least one matrix")
    Ad, Bd = zoh_discretize(system, dt)
    n_s, n_c = system.n_states, system.n_controls
    checked = [_check_weights(Q, R, n_s, n_c) for Q in Q_sequence]
    R = checked[0][1]
    P = checked[-1][0] if terminal_Q is None else _check_weights(terminal_Q, R, n_s, n_c)[0]
    gains = [None] * len(checked)
    for t in range(len(checked) - 1, -1, -1):
        S = R + Bd.T @ P @ Bd
        try:
            K = np.linalg.solve(S, Bd.T @ P @ Ad)
        except np.linalg.LinAlgError as exc:
            raise NumericalError(f"singular Riccati step at time index {t}") from exc
        gains[t] = ControlGains.from_matrix(K, riccati=P)
        P = _sym(checked[t][0] + Ad.T @ P @ (Ad - Bd @ K))
        if not np.all(np.isfinite(P)):
            raise NumericalError(f"Riccati recursion diverged at time index {t}")
    return gains


def control_command(gains: ControlGains, target, state) -> np.ndarray:
    """``u = Kp (x_hat - x) + Kv (v_hat - v)`` for stacked states ``[x, v]``."""
    err = np.asarray(target, dtype=float) - np.asarray(state, dtype=float)
    n_c = gains.Kp.shape[0]
    if err.shape != (2 * n_c,):
        raise ValidationError(f"state/target must have length {2 * n_c}")
    return gains.Kp @ err[:n_c] + gains.Kv @ err[n_c:]
