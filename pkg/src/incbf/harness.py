"""Scenario assembly and the fixed-step closed-loop simulation.

Per step: read sensors, optionally low-pass them, compute the performance
command, build the selected filter's constraints, solve the QP for the
input increment, saturate, record, advance the anchor and integrate the
plant over one step with the input held.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import cbf
from .cbf import BarrierSpec, CbfConstraint, ErrorBounds
from .config import ScenarioConfig
from .errors import InfeasibleError, NumericalError
from .incmodel import IncrementState, SensorModel, advance_anchor, disturbance_magnitude, sigma_residual
from .numerics import OdeState, lyapunov_solve, rk4_step, ultimate_bound
from .plants import BiasSensor, Lpf, PitchPlant, SisoPlant, bias, lpf_step, siso_gains
from .prng import SplitMix64
from .qp import Allocation, solve_rows


@dataclass
class SimTrace:
    """Per-step record of one run. Array rows are time steps."""

    dt: float
    barrier_names: list[str]
    t: np.ndarray
    x: np.ndarray
    y_true: np.ndarray
    y_hat: np.ndarray
    y_dot_hat: np.ndarray
    r: np.ndarray
    u_bar: np.ndarray
    delta_u: np.ndarray
    u: np.ndarray
    h: np.ndarray
    slack: np.ndarray
    filter_active: np.ndarray
    qp_iters: np.ndarray
    sigma: np.ndarray
    fp_iters: np.ndarray
    infeasible: np.ndarray
    alloc_slack: np.ndarray | None = None
    u_limits: tuple[float, float] = (-math.inf, math.inf)

    def __len__(self) -> int:
        return len(self.t)

    @property
    def n_in(self) -> int:
        return self.u.shape[1]


@dataclass
class Metrics:
    min_h: list[float]
    violation_duration: float
    tracking_rmse: float
    max_delta_u: float
    ultimate_bound: float
    max_y_after_transient: float
    infeasible_steps: int = 0
    max_sigma: float = 0.0
    u_total_variation: float = 0.0
    max_fp_iters: int = 0
    extra: dict = field(default_factory=dict)

    @property
    def ultimate_bound_check(self) -> tuple[float, float]:
        return self.ultimate_bound, self.max_y_after_transient

    def summary(self) -> str:
        min_h = ",".join(f"{v:.6f}" for v in self.min_h)
        return (f"min_h={min_h} violation_duration={self.violation_duration:.3f} "
                f"tracking_rmse={self.tracking_rmse:.6f} max_delta_u={self.max_delta_u:.6f} "
                f"ultimate_bound={self.ultimate_bound:.6f} "
                f"max_y_after_transient={self.max_y_after_transient:.6f} "
                f"infeasible_steps={self.infeasible_steps} u_tv={self.u_total_variation:.6f}")


# --------------------------------------------------------------------------
# assembly


def build_plant(cfg: ScenarioConfig):
    p = cfg.plant
    if p.kind == "siso":
        return SisoPlant(p.a_p, p.b_p, p.c_p, p.lam)
    slope, cmq = p.cm0_slope, p.cmq
    return PitchPlant(Iyy=p.iyy, qbar=p.qbar, S=p.s_ref, l_ref=p.l_ref, V=p.v, mach=p.mach,
                      alpha=p.alpha, cm0=lambda mach, alpha: slope * alpha,
                      cmq=lambda mach, alpha: cmq, Bp=np.array([p.bp]), mismatch=p.mismatch)


def build_barriers(cfg: ScenarioConfig) -> list[BarrierSpec]:
    out = []
    for b in cfg.barriers:
        if b.kind == "upper":
            out.append(cbf.upper_limit(b.limit, b.gamma))
        elif b.kind == "lower":
            out.append(cbf.lower_limit(b.limit, b.gamma))
        else:
            out.append(cbf.norm_ball(b.limit, b.gamma))
    return out


def build_bounds(cfg: ScenarioConfig) -> ErrorBounds:
    f = cfg.filter
    return ErrorBounds(f.sigma_bar, f.eps, f.theta, f.kappa())


def build_sensor(cfg: ScenarioConfig) -> SensorModel:
    s = cfg.sensor
    e_bias = BiasSensor(s.gamma, s.xi)
    w_amp = s.derivative_amplitude()
    noise_rng = SplitMix64(cfg.run.seed)
    noise = s.noise

    def e_fn(t, y):
        value = bias(e_bias, t)
        if noise > 0.0:
            value += noise_rng.symmetric(noise)
        return np.full(y.shape, value)

    def w_fn(t, y):
        value = w_amp * math.sin(s.xi * t + s.w_phase)
        if noise > 0.0:
            value += noise_rng.symmetric(noise)
        return np.full(y.shape, value)

    return SensorModel(e_fn, w_fn, cfg.filter.eps, cfg.filter.theta)


def reference(cfg: ScenarioConfig, t: float) -> float:
    ref = cfg.reference
    if ref.kind == "sine":
        return ref.amplitude * math.sin(ref.omega * t)
    if ref.kind == "step":
        return ref.value if t >= ref.t_step else 0.0
    return ref.value


def controller_gains(cfg: ScenarioConfig) -> tuple[float, float]:
    """(k_y, k_r) for the SISO loop; explicit config values win over LQR."""
    plant = build_plant(cfg)
    k_y, k_r = siso_gains(plant, cfg.controller.q, cfg.controller.r)
    if cfg.controller.k_y is not None:
        k_y = cfg.controller.k_y
        k_r = -(plant.a_p + plant.b_p * k_y * plant.c_p) / (plant.c_p * plant.b_p)
    if cfg.controller.k_r is not None:
        k_r = cfg.controller.k_r
    return k_y, k_r


def _box_norm(lo: np.ndarray, hi: np.ndarray) -> float:
    big = np.maximum(np.abs(lo), np.abs(hi))
    return math.sqrt(float(big @ big))


# --------------------------------------------------------------------------
# simulation


def run_scenario(cfg: ScenarioConfig) -> tuple[SimTrace, Metrics]:
    cfg.validate()
    trace = _simulate(cfg)
    return trace, compute_metrics(trace, cfg)


def run_pitch_scenario(cfg: ScenarioConfig) -> tuple[SimTrace, Metrics]:
    if cfg.plant.kind != "pitch":
        raise ValueError("run_pitch_scenario needs plant.kind = pitch")
    return run_scenario(cfg)


def _simulate(cfg: ScenarioConfig) -> SimTrace:
    plant = build_plant(cfg)
    pitch = isinstance(plant, PitchPlant)
    barriers = build_barriers(cfg)
    bounds = build_bounds(cfg)
    sensor = build_sensor(cfg)
    kind = cfg.filter.kind
    form = cfg.filter.margin_form
    dt = cfg.timing.dt
    n_steps = int(round(cfg.timing.t_end / dt))
    m = plant.n_in
    u_min, u_max = cfg.limits.u_min, cfg.limits.u_max
    lpf_y = Lpf(cfg.sensor.cutoff) if cfg.sensor.lpf else None
    lpf_yd = Lpf(cfg.sensor.cutoff) if cfg.sensor.lpf else None
    # the increment base goes through the same filter as the measured rate so
    # that u0 and y0_dot describe the same (delayed) operating point
    lpf_u = Lpf(cfg.sensor.cutoff) if cfg.sensor.lpf else None
    if pitch:
        k_y = k_r = 0.0
        gain = cfg.controller.rate_gain
    else:
        k_y, k_r = controller_gains(cfg)

    # worst-case compensation per barrier; box barriers have unit gradient
    if cfg.filter.grad_norm_sup is not None:
        phis = [cbf.worst_case_phi(b, bounds, cfg.filter.grad_norm_sup) for b in barriers]
    else:
        phis = [cbf.worst_case_phi(b, bounds, _grad_norm_sup(b, cfg)) for b in barriers]

    x = np.array([cfg.plant.q0 if pitch else cfg.plant.x0], dtype=float)
    u_prev = np.zeros(m)

    def measure_output(t, y_true):
        y_hat = y_true + sensor.output_error(t, y_true)
        return lpf_step(lpf_y, y_hat, dt) if lpf_y is not None else y_hat

    def measure_rate(t, x, u, y_true):
        yd = plant.output_rate(x, u) + sensor.derivative_error(t, y_true)
        return lpf_step(lpf_yd, yd, dt) if lpf_yd is not None else yd

    if lpf_u is not None:
        lpf_step(lpf_u, u_prev, dt)
    y_true = plant.output(x)
    y_hat0 = measure_output(0.0, y_true)
    anchor = IncrementState(y_hat0, u_prev, measure_rate(0.0, x, u_prev, y_true),
                            plant.input_matrix(y_hat0), dt)
    # the first output sample is already consumed by the anchor
    first_y_hat = y_hat0
    y_prev_true = y_true.copy()

    nb = len(barriers)
    rec_t = np.empty(n_steps)
    rec_x = np.empty(n_steps)
    rec_y = np.empty(n_steps)
    rec_yh = np.empty(n_steps)
    rec_ydh = np.empty(n_steps)
    rec_r = np.empty(n_steps)
    rec_ubar = np.empty(n_steps)
    rec_du = np.empty((n_steps, m))
    rec_u = np.empty((n_steps, m))
    rec_h = np.empty((n_steps, nb))
    rec_slack = np.empty((n_steps, nb))
    rec_active = np.zeros(n_steps, dtype=bool)
    rec_iters = np.zeros(n_steps, dtype=int)
    rec_sigma = np.empty(n_steps)
    rec_fp = np.zeros(n_steps, dtype=int)
    rec_infeasible = np.zeros(n_steps, dtype=bool)
    rec_alloc = np.zeros(n_steps) if pitch else None
    du_norm_prev = 0.0

    for k in range(n_steps):
        t = k * dt
        y_true = plant.output(x)
        y_hat = first_y_hat if k == 0 else measure_output(t, y_true)
        r = reference(cfg, t)

        lo = u_min - u_prev
        hi = u_max - u_prev
        if pitch:
            nu = gain * (r - y_hat[0])
            u_bar = nu
            target = plant.Iyy * (nu - anchor.y0_dot_meas)
            du_ref = np.zeros(m)
            alloc = Allocation(plant.Bp, target, cfg.filter.slack_weight)
        else:
            u_bar = k_y * y_hat[0] + k_r * r
            du_ref = np.array([u_bar]) - u_prev
            alloc = None

        def solve(constraints: list[CbfConstraint]):
            if constraints:
                A = np.array([c.a for c in constraints], dtype=float)
                b = np.array([c.b for c in constraints], dtype=float)
            else:
                A, b = np.zeros((0, m)), np.zeros(0)
            return solve_rows(m, du_ref, A, b, lo, hi, alloc)

        constraints: list[CbfConstraint] = []
        if kind == "standard_cbf":
            f_nom = plant.nominal_drift(y_hat)
            g_nom = plant.nominal_input(y_hat)
            for spec in barriers:
                c = cbf.standard_cbf_constraint(spec, f_nom, g_nom, y_hat)
                # shift from u to du = u - u0
                constraints.append(CbfConstraint(c.a, c.b - float(c.a @ u_prev), c.kind))
        elif kind == "icbf":
            constraints = [cbf.icbf_constraint(s, anchor.y0_dot_meas, anchor.B0, y_hat)
                           for s in barriers]
        elif kind in ("ricbf", "mricbf"):
            constraints = [cbf.ricbf_constraint(s, anchor.y0_dot_meas, anchor.B0, y_hat, phi)
                           for s, phi in zip(barriers, phis)]

        fp_iters = 0
        try:
            if kind == "mricbf":
                res = cbf.mricbf_constraint_fixed_point(
                    constraints, bounds, solve, du_norm_prev, _box_norm(lo, hi), form,
                    cfg.filter.fp_tol, cfg.filter.max_fp_iter)
                constraints, sol, fp_iters = res.constraints, res.solution, res.iterations
            else:
                sol = solve(constraints)
            du = sol.delta_u
            active = bool(sol.active_set & set(range(len(constraints))))
            iters = sol.iterations
            alloc_slack = 0.0 if sol.slack is None else float(np.linalg.norm(sol.slack))
            infeasible = False
        except (InfeasibleError, NumericalError) as exc:
            if cfg.run.strict:
                raise InfeasibleError(f"filter program failed at t={t:.6g}: {exc}",
                                      conflicting=getattr(exc, "conflicting", ())) from exc
            du = np.zeros(m)
            active, iters, alloc_slack, infeasible = True, 0, math.nan, True

        u = np.minimum(np.maximum(u_prev + du, u_min), u_max)
        du = u - u_prev
        du_norm_prev = math.sqrt(float(du @ du))

        rec_t[k] = t
        rec_x[k] = x[0]
        rec_y[k] = y_true[0]
        rec_yh[k] = y_hat[0]
        rec_ydh[k] = anchor.y0_dot_meas[0]
        rec_r[k] = r
        rec_ubar[k] = u_bar
        rec_du[k] = du
        rec_u[k] = u
        for j, spec in enumerate(barriers):
            rec_h[k, j] = spec.h(y_true)
            rec_slack[k, j] = constraints[j].margin(du) if constraints else math.nan
        rec_active[k] = active
        rec_iters[k] = iters
        rec_fp[k] = fp_iters
        rec_infeasible[k] = infeasible
        if rec_alloc is not None:
            rec_alloc[k] = alloc_slack
        A0 = plant.output_jacobian(x, u)
        rec_sigma[k] = sigma_residual(A0, y_true - y_prev_true, 0.0)

        u_base = lpf_step(lpf_u, u, dt) if lpf_u is not None else u
        anchor = advance_anchor(anchor, y_hat, u_base, measure_rate(t, x, u, y_true),
                                plant.input_matrix(y_hat))
        x = rk4_step(plant.dynamics, OdeState(t, x), u, dt).x
        u_prev = u_base
        y_prev_true = y_true

    return SimTrace(dt=dt, barrier_names=[s.name for s in barriers], t=rec_t, x=rec_x,
                    y_true=rec_y, y_hat=rec_yh, y_dot_hat=rec_ydh, r=rec_r, u_bar=rec_ubar,
                    delta_u=rec_du, u=rec_u, h=rec_h, slack=rec_slack, filter_active=rec_active,
                    qp_iters=rec_iters, sigma=rec_sigma, fp_iters=rec_fp,
                    infeasible=rec_infeasible, alloc_slack=rec_alloc, u_limits=(u_min, u_max))


def _grad_norm_sup(spec: BarrierSpec, cfg: ScenarioConfig) -> float:
    # sample over the band spanned by the configured barrier limits
    limits = [b.limit for b in cfg.barriers]
    lo, hi = min(limits + [0.0]), max(limits + [0.0])
    if hi - lo <= 0:
        hi = lo + 1.0
    pad = 0.1 * (hi - lo)
    return cbf.grad_norm_sup(spec, [lo - pad], [hi + pad], samples=200, seed=cfg.run.seed)


# --------------------------------------------------------------------------
# metrics


def loop_model(cfg: ScenarioConfig) -> tuple[float, float, float]:
    """(closed-loop pole, feedback gain magnitude, reference drive gain) of the nominal loop."""
    if cfg.plant.kind == "pitch":
        k = cfg.controller.rate_gain
        return -k, k, k
    p = cfg.plant
    k_y, k_r = controller_gains(cfg)
    acl = p.a_p + p.c_p * p.b_p * k_y
    return acl, abs(k_y), abs(p.c_p * p.b_p * k_r)


def compute_metrics(trace: SimTrace, cfg: ScenarioConfig) -> Metrics:
    if len(trace) == 0:
        raise ValueError("empty trace")
    dt = trace.dt
    min_h = [float(v) for v in trace.h.min(axis=0)] if trace.h.size else []
    violating = np.any(trace.h < 0.0, axis=1) if trace.h.size else np.zeros(len(trace), bool)
    violation_duration = dt * int(np.count_nonzero(violating))
    err = trace.y_true - trace.r
    rmse = float(np.sqrt(np.mean(err * err)))
    max_du = float(np.max(np.linalg.norm(trace.delta_u, axis=1)))
    tv = float(np.sum(np.abs(np.diff(trace.u, axis=0))))

    acl, k_norm, ref_gain = loop_model(cfg)
    bound = math.nan
    if acl < 0:
        Q = np.eye(1)
        P = lyapunov_solve(np.array([[acl]]), Q)
        D = disturbance_magnitude(k_norm, build_bounds(cfg)) + ref_gain * float(np.max(np.abs(trace.r)))
        bound = ultimate_bound(P, Q, D)
    after = trace.t >= cfg.timing.transient
    max_y = float(np.max(np.abs(trace.y_true[after]))) if np.any(after) else math.nan

    return Metrics(min_h=min_h, violation_duration=violation_duration, tracking_rmse=rmse,
                   max_delta_u=max_du, ultimate_bound=bound, max_y_after_transient=max_y,
                   infeasible_steps=int(np.count_nonzero(trace.infeasible)),
                   max_sigma=float(np.max(trace.sigma)), u_total_variation=tv,
                   max_fp_iters=int(np.max(trace.fp_iters)))
