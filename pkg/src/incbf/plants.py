"""Simulated plants, sensors and small signal-processing blocks.

Plants expose the same small surface so the harness can drive either:

* ``n_state``, ``n_out``, ``n_in``
* ``dynamics(t, x, u)`` true state derivative
* ``output(x)`` true output
* ``output_rate(x, u)`` true output derivative
* ``input_matrix(y)`` the input map g(y) of the output dynamics
* ``output_jacobian(x, u)`` d/dy [f + g u] of the true output dynamics
* ``nominal_drift(y)`` / ``nominal_input(y)`` the controller-side model
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .numerics import lqr_gain

DEG = math.pi / 180.0


# --------------------------------------------------------------------------
# 1D SISO plant


@dataclass(frozen=True)
class SisoPlant:
    """x_dot = Lambda a_p x + b_p u, y = c_p x.

    ``Lambda`` scales the unforced dynamics only; the controller side
    assumes ``Lambda = 1``.
    """

    a_p: float = -1.0
    b_p: float = 1.0
    c_p: float = 1.0
    Lambda: float = 0.6

    n_state = 1
    n_out = 1
    n_in = 1

    def __post_init__(self):
        if self.b_p == 0.0:
            raise ValueError("b_p must be non-zero")
        if self.c_p == 0.0:
            raise ValueError("c_p must be non-zero")
        object.__setattr__(self, "_drift", self.Lambda * self.a_p)

    def dynamics(self, t: float, x: np.ndarray, u: np.ndarray) -> np.ndarray:
        # elementwise on length-1 arrays, same expression as siso_dynamics
        return self._drift * x + self.b_p * u

    def output(self, x: np.ndarray) -> np.ndarray:
        return np.array([self.c_p * x[0]])

    def output_rate(self, x: np.ndarray, u: np.ndarray) -> np.ndarray:
        return self.c_p * self.dynamics(0.0, x, u)

    def input_matrix(self, y) -> np.ndarray:
        return np.array([[self.c_p * self.b_p]])

    def output_jacobian(self, x, u) -> np.ndarray:
        # y = c x  =>  y_dot = Lambda a y + c b u
        return np.array([[self.Lambda * self.a_p]])

    def nominal_drift(self, y) -> np.ndarray:
        return np.array([self.a_p * float(np.atleast_1d(y)[0])])

    def nominal_input(self, y) -> np.ndarray:
        return self.input_matrix(y)


def siso_dynamics(p: SisoPlant, x: float, u: float) -> float:
    return p.Lambda * p.a_p * x + p.b_p * u


def siso_gains(p: SisoPlant, Q: float, R: float) -> tuple[float, float]:
    """(k_y, k_r) for u = k_y y + k_r r on the nominal model.

    k_y comes from LQR on the nominal state model; k_r gives unit DC gain
    from r to y on the same model.
    """
    K = float(lqr_gain(p.a_p, p.b_p, Q, R)[0, 0])
    k_y = -K / p.c_p
    k_r = -(p.a_p + p.b_p * k_y * p.c_p) / (p.c_p * p.b_p)
    return k_y, k_r


def performance_controller(k_y: float, k_r: float, y_meas: float, r: float) -> float:
    return k_y * y_meas + k_r * r


# --------------------------------------------------------------------------
# isolated pitch-rate dynamics of an over-actuated glide vehicle


def _cm0_default(mach: float, alpha: float) -> float:
    return -0.005 * alpha


def _cmq_default(mach: float, alpha: float) -> float:
    return -0.2


@dataclass(frozen=True)
class PitchPlant:
    """q_dot = (qbar S l_ref (Cm0 + Cmq q / (2V)) + Bp u) / Iyy.

    Mach and angle of attack are frozen parameters of the isolated rate
    loop. The default numbers are synthetic but dimensionally consistent.
    """

    Iyy: float = 500.0
    qbar: float = 5e4
    S: float = 1.0
    l_ref: float = 2.0
    V: float = 2000.0
    mach: float = 6.0
    alpha: float = 2.0 * DEG
    cm0: Callable[[float, float], float] = _cm0_default
    cmq: Callable[[float, float], float] = _cmq_default
    Bp: np.ndarray = field(default_factory=lambda: np.array([[-50.0, -50.0, 30.0, 30.0]]))
    mismatch: float = 0.0
    cm_scale: float = 1.0

    n_state = 1
    n_out = 1
    n_in = 4

    def __post_init__(self):
        if not self.Iyy > 0:
            raise ValueError("Iyy must be positive")
        if not self.V > 0:
            raise ValueError("V must be positive")
        Bp = np.atleast_2d(np.asarray(self.Bp, dtype=float))
        if Bp.shape != (1, 4):
            raise ValueError(f"Bp must be 1x4, got {Bp.shape}")
        object.__setattr__(self, "Bp", Bp)

    def coefficients(self) -> tuple[float, float]:
        return (self.cm_scale * self.cm0(self.mach, self.alpha),
                self.cm_scale * self.cmq(self.mach, self.alpha))

    def aero_moment(self, q: float) -> float:
        c0, cq = self.coefficients()
        return self.qbar * self.S * self.l_ref * (c0 + cq / (2.0 * self.V) * q)

    def dynamics(self, t: float, x: np.ndarray, u: np.ndarray) -> np.ndarray:
        return np.array([pitch_dynamics(self, x[0], self.mach, self.alpha, u)])

    def output(self, x: np.ndarray) -> np.ndarray:
        return np.array([x[0]])

    def output_rate(self, x, u) -> np.ndarray:
        return self.dynamics(0.0, x, u)

    def input_matrix(self, y) -> np.ndarray:
        return self.Bp / self.Iyy

    def output_jacobian(self, x, u) -> np.ndarray:
        _, cq = self.coefficients()
        return np.array([[self.qbar * self.S * self.l_ref * cq / (2.0 * self.V) / self.Iyy]])

    def nominal_drift(self, y) -> np.ndarray:
        model = nominal_pitch_model(self)
        return np.array([model.aero_moment(float(np.atleast_1d(y)[0])) / self.Iyy])

    def nominal_input(self, y) -> np.ndarray:
        return self.input_matrix(y)


def pitch_dynamics(p: PitchPlant, q: float, mach: float, alpha: float, u) -> float:
    u = np.atleast_1d(np.asarray(u, dtype=float))
    c0 = p.cm_scale * p.cm0(mach, alpha)
    cq = p.cm_scale * p.cmq(mach, alpha)
    aero = p.qbar * p.S * p.l_ref * (c0 + cq / (2.0 * p.V) * q)
    return (aero + float(p.Bp[0] @ u)) / p.Iyy


def nominal_pitch_model(p: PitchPlant) -> PitchPlant:
    """Controller-side copy with Cm0 and Cmq scaled by (1 + mismatch)."""
    return replace(p, cm_scale=p.cm_scale * (1.0 + p.mismatch), mismatch=0.0)


# --------------------------------------------------------------------------
# sensors and filters


@dataclass(frozen=True)
class BiasSensor:
    """e(t) = Gamma sin(xi t)."""

    Gamma: float = 0.1
    xi: float = 1.0

    def __post_init__(self):
        if self.Gamma < 0:
            raise ValueError("Gamma must be non-negative")
        if not self.xi > 0:
            raise ValueError("xi must be positive")


def bias(s: BiasSensor, t: float) -> float:
    return s.Gamma * math.sin(s.xi * t)


@dataclass
class Lpf:
    """First-order low-pass filter, exactly discretized for a held input.

    The state is seeded with the first sample so a constant signal passes
    without a start-up transient.
    """

    cutoff: float
    state: np.ndarray | None = None

    def __post_init__(self):
        if not self.cutoff > 0:
            raise ValueError("cutoff must be positive")


def lpf_step(f: Lpf, sample, dt: float) -> np.ndarray:
    if not dt > 0:
        raise ValueError("dt must be positive")
    sample = np.atleast_1d(np.asarray(sample, dtype=float))
    if f.state is None:
        f.state = sample.copy()
        return f.state.copy()
    gain = 1.0 - math.exp(-f.cutoff * dt)
    f.state = f.state + gain * (sample - f.state)
    return f.state.copy()
