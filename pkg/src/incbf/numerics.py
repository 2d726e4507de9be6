"""Small dense linear algebra, fixed-step integration and matrix equations.

Everything here works on plain numpy arrays. Scalars are promoted to 1x1
matrices so the scalar examples (``care_solve(-1, 1, 3, 0.2)``) read the
same way as the matrix ones.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import InfeasibleError, IntegrationError, NumericalError

HYPERBOLIC_TOL = 1e-9

VectorField = Callable[[float, np.ndarray, np.ndarray], np.ndarray]


def as_matrix(value) -> np.ndarray:
    """Promote a scalar, vector or nested list to a 2-D float array."""
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        return arr.reshape(1, 1)
    if arr.ndim == 1:
        return arr.reshape(1, -1) if arr.size > 1 else arr.reshape(1, 1)
    if arr.ndim != 2:
        raise ValueError(f"expected at most 2 dimensions, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("matrix entries must be finite")
    return arr


def _square(name: str, mat: np.ndarray) -> None:
    if mat.shape[0] != mat.shape[1]:
        raise ValueError(f"{name} must be square, got shape {mat.shape}")


# --------------------------------------------------------------------------
# integration


@dataclass(frozen=True)
class OdeState:
    t: float
    x: np.ndarray


def rk4_step(f: VectorField, s: OdeState, u, dt: float) -> OdeState:
    """Advance ``s`` by one classical Runge-Kutta step, ``u`` held constant.

    ``f(t, x, u)`` returns the state derivative.
    """
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    t, x = s.t, np.asarray(s.x, dtype=float)
    half = 0.5 * dt
    k1 = f(t, x, u)
    k2 = f(t + half, x + half * k1, u)
    k3 = f(t + half, x + half * k2, u)
    k4 = f(t + dt, x + dt * k3, u)
    incr = k1 + 2.0 * k2 + 2.0 * k3 + k4
    if not math.isfinite(float(incr.sum())):
        raise IntegrationError(t, x)
    x_next = x + (dt / 6.0) * incr
    return OdeState(t + dt, x_next)


# --------------------------------------------------------------------------
# eigenvalues


def eig_real_parts(A) -> np.ndarray:
    A = as_matrix(A)
    _square("A", A)
    try:
        eigs = np.linalg.eigvals(A)
    except np.linalg.LinAlgError as exc:  # pragma: no cover - LAPACK failure
        raise NumericalError(f"eigenvalue computation failed: {exc}") from exc
    return np.sort(eigs.real)


def is_hurwitz(A) -> bool:
    return bool(np.all(eig_real_parts(A) < 0.0))


def check_hyperbolic(A, tol: float = HYPERBOLIC_TOL) -> bool:
    """True when no eigenvalue of ``A`` lies on the imaginary axis."""
    return bool(np.all(np.abs(eig_real_parts(A)) > tol))


# --------------------------------------------------------------------------
# Lyapunov / Riccati


def _lyap_kron(Acl: np.ndarray, Q: np.ndarray) -> np.ndarray:
    # Acl^T P + P Acl = -Q, column-major vec: (I kron Acl^T + Acl^T kron I) vec(P)
    n = Acl.shape[0]
    eye = np.eye(n)
    lhs = np.kron(eye, Acl.T) + np.kron(Acl.T, eye)
    rhs = -Q.reshape(-1, order="F")
    try:
        vec_p = np.linalg.solve(lhs, rhs)
    except np.linalg.LinAlgError as exc:
        raise InfeasibleError(f"Lyapunov operator is singular: {exc}") from exc
    P = vec_p.reshape(n, n, order="F")
    return 0.5 * (P + P.T)


def lyapunov_solve(Acl, Q) -> np.ndarray:
    """Solve ``Acl^T P + P Acl = -Q`` for a Hurwitz ``Acl``."""
    Acl = as_matrix(Acl)
    Q = as_matrix(Q)
    _square("Acl", Acl)
    _square("Q", Q)
    if Q.shape != Acl.shape:
        raise ValueError(f"Q shape {Q.shape} does not match Acl shape {Acl.shape}")
    if not np.allclose(Q, Q.T, atol=1e-12):
        raise ValueError("Q must be symmetric")
    if not is_hurwitz(Acl):
        raise InfeasibleError(
            f"closed-loop matrix is not Hurwitz (eigenvalue real parts {eig_real_parts(Acl)})")
    return _lyap_kron(Acl, Q)


def lyapunov_residual(Acl, P, Q) -> float:
    Acl, P, Q = as_matrix(Acl), as_matrix(P), as_matrix(Q)
    return float(np.max(np.abs(Acl.T @ P + P @ Acl + Q)))


def care_residual(A, B, Q, R, P) -> float:
    A, B, Q, R, P = (as_matrix(m) for m in (A, B, Q, R, P))
    B = B.reshape(A.shape[0], -1)
    res = A.T @ P + P @ A - P @ B @ np.linalg.solve(R, B.T @ P) + Q
    return float(np.max(np.abs(res)))


def _stabilizing_seed(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Return K0 with A - B K0 Hurwitz.

    Uses the shifted-Gramian construction: with beta larger than the
    spectral abscissa of A, K0 = B^T W^-1 where
    (A + beta I) W + W (A + beta I)^T = 2 B B^T.
    """
    n, m = B.shape
    if is_hurwitz(A):
        return np.zeros((m, n))
    beta = max(1.0, float(np.max(eig_real_parts(A))) + 1.0) + np.linalg.norm(A, 2)
    As = A + beta * np.eye(n)
    # Lyapunov form with -As^T: (-As) W + W (-As)^T = -2 B B^T
    W = _lyap_kron(-As.T, 2.0 * B @ B.T)
    try:
        K0 = B.T @ np.linalg.inv(W)
    except np.linalg.LinAlgError as exc:
        raise NumericalError("pair (A, B) is not stabilizable by the seed construction") from exc
    if not is_hurwitz(A - B @ K0):
        raise NumericalError("could not find a stabilizing initial gain; (A, B) may not be stabilizable")
    return K0


def care_solve(A, B, Q, R, *, tol: float = 1e-12, max_iter: int = 100) -> np.ndarray:
    """Stabilizing solution of ``A^T P + P A - P B R^-1 B^T P + Q = 0``.

    Scalars use the closed-form positive root; matrices use Kleinman-Newton
    iterations started from a stabilizing gain.
    """
    A = as_matrix(A)
    _square("A", A)
    n = A.shape[0]
    B = as_matrix(B).reshape(n, -1)
    Q = as_matrix(Q)
    R = as_matrix(R)
    m = B.shape[1]
    if Q.shape != (n, n) or R.shape != (m, m):
        raise ValueError(f"inconsistent shapes A{A.shape} B{B.shape} Q{Q.shape} R{R.shape}")
    if not np.allclose(Q, Q.T) or not np.allclose(R, R.T):
        raise ValueError("Q and R must be symmetric")
    if np.min(np.linalg.eigvalsh(Q)) < -1e-12:
        raise ValueError("Q must be positive semidefinite")
    if np.min(np.linalg.eigvalsh(R)) <= 0.0:
        raise ValueError("R must be positive definite")

    if n == 1 and m == 1:
        a, b, q, r = A[0, 0], B[0, 0], Q[0, 0], R[0, 0]
        if b == 0.0:
            if a >= 0.0:
                raise NumericalError("unstabilizable scalar pair (b = 0, a >= 0)")
            return np.array([[q / (-2.0 * a)]])
        # (b^2/r) p^2 - 2 a p - q = 0, stabilizing root
        s = b * b / r
        p = (a + math.sqrt(a * a + s * q)) / s
        return np.array([[p]])

    K = _stabilizing_seed(A, B)
    P = np.zeros((n, n))
    residual = math.inf
    for _ in range(max_iter):
        Acl = A - B @ K
        P_new = _lyap_kron(Acl, Q + K.T @ R @ K)
        K = np.linalg.solve(R, B.T @ P_new)
        step = float(np.max(np.abs(P_new - P)))
        P = P_new
        residual = care_residual(A, B, Q, R, P)
        if residual <= 1e-9 and step <= tol * max(1.0, float(np.max(np.abs(P)))):
            return P
    if residual <= 1e-9:
        return P
    raise NumericalError(f"Kleinman iteration did not converge (residual {residual:.3e})")


def lqr_gain(A, B, Q, R) -> np.ndarray:
    """Gain ``K`` of the state feedback ``u = -K x``."""
    A = as_matrix(A)
    n = A.shape[0]
    B = as_matrix(B).reshape(n, -1)
    R = as_matrix(R)
    P = care_solve(A, B, Q, R)
    return np.linalg.solve(R, B.T @ P)


def ultimate_bound(P, Q, D: float) -> float:
    """Radius ``sqrt(2 lmax(P) / lmin(Q)) * D`` of the ultimate bound set."""
    P, Q = as_matrix(P), as_matrix(Q)
    if D < 0:
        raise ValueError(f"disturbance magnitude must be non-negative, got {D}")
    lam_p = np.linalg.eigvalsh(0.5 * (P + P.T))
    lam_q = np.linalg.eigvalsh(0.5 * (Q + Q.T))
    if lam_p.min() <= 0.0 or lam_q.min() <= 0.0:
        raise ValueError("P and Q must be positive definite")
    return math.sqrt(2.0 * lam_p.max() / lam_q.min()) * D
