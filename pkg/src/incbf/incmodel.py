"""Sensor-based reduced-order model: anchor bookkeeping, error bounds, control law.

The plant output is approximated around the previous sample as
``y_dot ~= y0_dot + B0 du`` with everything neglected lumped into a
simplification error whose norm is at most ``||A0 dy|| + delta``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .cbf import ErrorBounds, _vec
from .errors import ConfigError, SingularityError

MAX_CONDITION = 1e8


@dataclass(frozen=True)
class IncrementState:
    """Anchor values from the previous sample."""

    y0: np.ndarray
    u0: np.ndarray
    y0_dot_meas: np.ndarray
    B0: np.ndarray
    dt: float

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        y0 = _vec(self.y0)
        u0 = _vec(self.u0)
        yd = _vec(self.y0_dot_meas)
        B0 = np.asarray(self.B0, dtype=float)
        if B0.shape != (y0.size, u0.size):
            B0 = B0.reshape(y0.size, u0.size)
        if yd.size != y0.size:
            raise ValueError("y0_dot_meas must match the output dimension")
        object.__setattr__(self, "y0", y0)
        object.__setattr__(self, "u0", u0)
        object.__setattr__(self, "y0_dot_meas", yd)
        object.__setattr__(self, "B0", B0)

    @classmethod
    def zeros(cls, p: int, m: int, dt: float) -> "IncrementState":
        return cls(np.zeros(p), np.zeros(m), np.zeros(p), np.zeros((p, m)), dt)


def advance_anchor(prev: IncrementState, y_meas, u_applied, y_dot_meas, g_at_y0) -> IncrementState:
    return IncrementState(y_meas, u_applied, y_dot_meas, g_at_y0, prev.dt)


def incremental_controller(nu, inc: IncrementState) -> np.ndarray:
    """du = B0^-1 (nu - y0_dot_meas); the command is u0 + du."""
    B0 = inc.B0
    if B0.shape[0] != B0.shape[1]:
        raise SingularityError(
            f"B0 has shape {B0.shape}; non-square input maps need control allocation")
    cond = np.linalg.cond(B0)
    if not math.isfinite(cond) or cond > MAX_CONDITION:
        raise SingularityError(f"B0 is singular or ill-conditioned (cond={cond:.3g})")
    rhs = np.atleast_1d(np.asarray(nu, dtype=float)) - inc.y0_dot_meas
    return np.linalg.solve(B0, rhs)


@dataclass(frozen=True)
class TruncationSpec:
    M: float
    k: int = 1

    def __post_init__(self):
        if not (math.isfinite(self.M) and self.M >= 0):
            raise ValueError("M must be finite and non-negative")
        if self.k < 1:
            raise ValueError("truncation order must be at least 1")


def truncation_bound(spec: TruncationSpec, dy) -> float:
    """M / (k+1)! * ||dy||^(k+1)."""
    norm = float(np.linalg.norm(np.atleast_1d(dy)))
    return spec.M / math.factorial(spec.k + 1) * norm ** (spec.k + 1)


def sigma_residual(A0, dy, delta: float) -> float:
    """Triangle-inequality bound ||A0 dy|| + delta on the simplification error."""
    dy = _vec(dy)
    A0 = np.asarray(A0, dtype=float)
    if A0.ndim != 2 or A0.shape[1] != dy.size:
        A0 = A0.reshape(-1, dy.size)
    v = A0 @ dy
    return math.sqrt(float(v @ v)) + delta


def disturbance_magnitude(K_norm: float, bounds: ErrorBounds) -> float:
    """K eps + theta + sigma_bar, every term taken with a positive sign."""
    return K_norm * bounds.eps + bounds.theta + bounds.sigma_bar


ErrorFn = Callable[[float, np.ndarray], np.ndarray]


def _zero_error(t: float, y: np.ndarray) -> np.ndarray:
    return np.zeros_like(y)


@dataclass
class SensorModel:
    """Additive output and derivative errors with declared norm bounds.

    Every evaluation is audited against ``eps`` / ``theta``; the running
    maxima are kept in ``max_e`` / ``max_w``.
    """

    e_fn: ErrorFn = _zero_error
    w_fn: ErrorFn = _zero_error
    eps: float = 0.0
    theta: float = 0.0
    audit_tol: float = 1e-12
    max_e: float = field(default=0.0, init=False)
    max_w: float = field(default=0.0, init=False)

    def output_error(self, t: float, y) -> np.ndarray:
        y = _vec(y)
        e = _vec(self.e_fn(t, y))
        norm = math.sqrt(float(e @ e))
        if norm > self.eps + self.audit_tol:
            raise ConfigError(f"output error norm {norm:.6g} exceeds eps={self.eps:g} at t={t:.6g}")
        self.max_e = max(self.max_e, norm)
        return e

    def derivative_error(self, t: float, y) -> np.ndarray:
        y = _vec(y)
        w = _vec(self.w_fn(t, y))
        norm = math.sqrt(float(w @ w))
        if norm > self.theta + self.audit_tol:
            raise ConfigError(
                f"derivative error norm {norm:.6g} exceeds theta={self.theta:g} at t={t:.6g}")
        self.max_w = max(self.max_w, norm)
        return w


def corrupt_measurements(sensor: SensorModel, y_true, y_dot_true, t: float):
    """Return (y_hat, y_dot_hat) = (y + e, y_dot + w)."""
    y_true = np.atleast_1d(np.asarray(y_true, dtype=float))
    y_dot_true = np.atleast_1d(np.asarray(y_dot_true, dtype=float))
    return (y_true + sensor.output_error(t, y_true),
            y_dot_true + sensor.derivative_error(t, y_true))
