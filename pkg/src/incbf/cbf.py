"""Barrier functions and the linear constraints each safety filter imposes.

Every constraint is stored as ``a . v >= b`` where ``v`` is the decision
variable of the filter QP: the input ``u`` for the model-based filter and
the input increment ``du`` for the incremental variants.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import InfeasibleError
from .prng import SplitMix64

STANDARD = "standard"
ICBF = "icbf"
RICBF = "ricbf"
MRICBF = "mricbf"

ADDITIVE = "additive"
PRODUCT = "product"


@dataclass(frozen=True)
class BarrierSpec:
    """Scalar barrier ``h`` on the output, with class-K slope ``gamma``.

    The safe set is ``{y : h(y) >= 0}``; the class-K function is
    ``alpha(r) = gamma * r``.
    """

    h: Callable[[np.ndarray], float]
    grad_h: Callable[[np.ndarray], np.ndarray]
    gamma: float = 1.0
    name: str = "h"

    def __post_init__(self):
        if not self.gamma > 0:
            raise ValueError(f"gamma must be positive, got {self.gamma}")

    def alpha(self, r: float) -> float:
        return self.gamma * r


def upper_limit(limit: float, gamma: float = 1.0, index: int = 0, dim: int = 1) -> BarrierSpec:
    """h(y) = limit - y[index]."""
    grad = np.zeros(dim)
    grad[index] = -1.0
    return BarrierSpec(lambda y: limit - float(_vec(y)[index]),
                       lambda y: grad.copy(), gamma, f"upper({limit:g})")


def lower_limit(limit: float, gamma: float = 1.0, index: int = 0, dim: int = 1) -> BarrierSpec:
    """h(y) = y[index] - limit."""
    grad = np.zeros(dim)
    grad[index] = 1.0
    return BarrierSpec(lambda y: float(_vec(y)[index]) - limit,
                       lambda y: grad.copy(), gamma, f"lower({limit:g})")


def norm_ball(radius: float, gamma: float = 1.0) -> BarrierSpec:
    """h(y) = radius^2 - ||y||^2."""
    def h(y):
        y = np.atleast_1d(np.asarray(y, dtype=float))
        return radius * radius - float(y @ y)

    def grad(y):
        return -2.0 * np.atleast_1d(np.asarray(y, dtype=float))

    return BarrierSpec(h, grad, gamma, f"ball({radius:g})")


@dataclass(frozen=True)
class ErrorBounds:
    """Known bounds on model-approximation and measurement errors.

    sigma_bar bounds the simplification error, eps the output measurement
    error, theta the derivative measurement error. kappa holds the Lipschitz
    constants of (dh.y0_dot, dh.B0, dh.phi, alpha o h) on the safe set.
    """

    sigma_bar: float = 0.0
    eps: float = 0.0
    theta: float = 0.0
    kappa: tuple[float, float, float, float] = (0.0, 0.0, 0.0, 0.0)

    def __post_init__(self):
        kappa = tuple(float(k) for k in self.kappa)
        if len(kappa) != 4:
            raise ValueError("kappa needs exactly four entries")
        object.__setattr__(self, "kappa", kappa)
        for name, value in (("sigma_bar", self.sigma_bar), ("eps", self.eps),
                            ("theta", self.theta)) + tuple(
                                (f"kappa{i + 1}", k) for i, k in enumerate(kappa)):
            if not (math.isfinite(value) and value >= 0.0):
                raise ValueError(f"{name} must be finite and non-negative, got {value}")


@dataclass(frozen=True)
class CbfConstraint:
    a: np.ndarray
    b: float
    kind: str

    def margin(self, v) -> float:
        """a . v - b; non-negative when the constraint holds."""
        return float(self.a @ _vec(v)) - self.b

    def as_row(self) -> tuple[np.ndarray, float]:
        return self.a, self.b


def barrier_margin(spec: BarrierSpec, y) -> float:
    return float(spec.h(np.atleast_1d(np.asarray(y, dtype=float))))


def standard_cbf_constraint(spec: BarrierSpec, f_x, g_x, x) -> CbfConstraint:
    """L_f h + L_g h u + gamma h >= 0 written as a . u >= b."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    grad = np.atleast_1d(spec.grad_h(x))
    f_x = np.atleast_1d(np.asarray(f_x, dtype=float))
    g_x = np.asarray(g_x, dtype=float).reshape(f_x.size, -1)
    a = grad @ g_x
    b = -float(grad @ f_x) - spec.alpha(spec.h(x))
    return CbfConstraint(a, b, STANDARD)


def _vec(v) -> np.ndarray:
    if isinstance(v, np.ndarray) and v.ndim == 1 and v.dtype == np.float64:
        return v
    return np.atleast_1d(np.asarray(v, dtype=float))


def icbf_constraint(spec: BarrierSpec, y0_dot, B0, y) -> CbfConstraint:
    """dh (y0_dot + B0 du) >= -gamma h(y), the error term left out."""
    y = _vec(y)
    y0_dot = _vec(y0_dot)
    grad = _vec(spec.grad_h(y))
    B0 = np.asarray(B0, dtype=float)
    if B0.ndim != 2 or B0.shape[0] != y0_dot.size:
        B0 = B0.reshape(y0_dot.size, -1)
    a = grad @ B0
    b = -float(grad @ y0_dot) - spec.alpha(spec.h(y))
    return CbfConstraint(a, b, ICBF)


def ricbf_constraint(spec: BarrierSpec, y0_dot, B0, y, phi: float) -> CbfConstraint:
    if phi < 0:
        raise ValueError(f"compensation phi must be non-negative, got {phi}")
    base = icbf_constraint(spec, y0_dot, B0, y)
    return CbfConstraint(base.a, base.b + phi, RICBF)


def worst_case_phi(spec: BarrierSpec, bounds: ErrorBounds, grad_norm_sup: float) -> float:
    """Worst-case compensation sup ||dh|| * sigma_bar."""
    if grad_norm_sup < 0:
        raise ValueError("grad_norm_sup must be non-negative")
    return grad_norm_sup * bounds.sigma_bar


def mricbf_terms(bounds: ErrorBounds) -> tuple[float, float]:
    k1, k2, k3, k4 = bounds.kappa
    return (k1 + k3 + k4) * bounds.eps, k2 * bounds.eps


def mricbf_tightening(bounds: ErrorBounds, du_norm: float, form: str = ADDITIVE) -> float:
    """Measurement-robust margin added on top of phi for a given ||du||.

    ``additive``: a + b ||du||. ``product``: (a + b) ||du||.
    """
    a_coef, b_coef = mricbf_terms(bounds)
    if form == ADDITIVE:
        return a_coef + b_coef * du_norm
    if form == PRODUCT:
        return (a_coef + b_coef) * du_norm
    raise ValueError(f"unknown margin form {form!r}")


def mricbf_constraint(spec: BarrierSpec, y0_dot, B0, y, phi: float, bounds: ErrorBounds,
                      du_norm: float, form: str = ADDITIVE) -> CbfConstraint:
    base = ricbf_constraint(spec, y0_dot, B0, y, phi)
    return CbfConstraint(base.a, base.b + mricbf_tightening(bounds, du_norm, form), MRICBF)


def _norm(v: np.ndarray) -> float:
    return math.sqrt(float(v @ v))


@dataclass
class FixedPointResult:
    constraints: list[CbfConstraint]
    solution: object
    iterations: int
    fallback: bool
    du_norm: float


def mricbf_constraint_fixed_point(
    base: Sequence[CbfConstraint],
    bounds: ErrorBounds,
    qp_builder: Callable[[list[CbfConstraint]], object],
    du_norm0: float = 0.0,
    du_max_norm: float | None = None,
    form: str = ADDITIVE,
    tol: float = 1e-6,
    max_iter: int = 10,
) -> FixedPointResult:
    """Resolve the ||du|| dependence of the MRICBF margin by iteration.

    ``base`` are the RICBF constraints (phi already included). ``qp_builder``
    solves the filter program for a list of constraints and returns an
    object with a ``delta_u`` attribute. When the iteration does not settle,
    the margin is evaluated at ``du_max_norm`` (the largest increment the box
    admits) and the program is solved once more.
    """
    a_coef, b_coef = mricbf_terms(bounds)
    norm_weight = b_coef if form == ADDITIVE else a_coef + b_coef

    def tightened(norm: float) -> list[CbfConstraint]:
        extra = mricbf_tightening(bounds, norm, form)
        return [CbfConstraint(c.a, c.b + extra, MRICBF) for c in base]

    norm = float(du_norm0)
    if norm_weight == 0.0:
        cons = tightened(0.0)
        sol = qp_builder(cons)
        return FixedPointResult(cons, sol, 1, False, _norm(sol.delta_u))
    for it in range(1, max_iter + 1):
        cons = tightened(norm)
        sol = qp_builder(cons)
        new_norm = _norm(sol.delta_u)
        if abs(new_norm - norm) < tol:
            return FixedPointResult(cons, sol, it, False, new_norm)
        norm = new_norm
    if du_max_norm is None:
        raise InfeasibleError("MRICBF fixed point did not converge and no box bound is available")
    cons = tightened(du_max_norm)
    sol = qp_builder(cons)
    return FixedPointResult(cons, sol, max_iter + 1, True, _norm(sol.delta_u))


# --------------------------------------------------------------------------
# sampled constants over an operating box


def _sample_box(lo: np.ndarray, hi: np.ndarray, n: int, rng: SplitMix64) -> np.ndarray:
    return lo + (hi - lo) * rng.uniform_array((n, lo.size))


def grad_norm_sup(spec: BarrierSpec, lo, hi, samples: int = 10_000, seed: int = 0) -> float:
    """Largest sampled ||grad h|| over the box [lo, hi]."""
    lo = np.atleast_1d(np.asarray(lo, dtype=float))
    hi = np.atleast_1d(np.asarray(hi, dtype=float))
    pts = _sample_box(lo, hi, samples, SplitMix64(seed))
    return max(float(np.linalg.norm(spec.grad_h(p))) for p in pts)


def estimate_lipschitz(fn: Callable[[np.ndarray], float], lo, hi, samples: int = 10_000,
                       seed: int = 0, inflate: float = 1.1) -> float:
    """Sampled Lipschitz constant of a scalar ``fn`` over the box, inflated by 10%.

    Pairs are drawn uniformly; the sample maximum of |f(a)-f(b)|/||a-b||
    is returned multiplied by ``inflate``.
    """
    lo = np.atleast_1d(np.asarray(lo, dtype=float))
    hi = np.atleast_1d(np.asarray(hi, dtype=float))
    rng = SplitMix64(seed)
    a = _sample_box(lo, hi, samples, rng)
    b = _sample_box(lo, hi, samples, rng)
    best = 0.0
    for pa, pb in zip(a, b):
        dist = float(np.linalg.norm(pa - pb))
        if dist < 1e-12:
            continue
        best = max(best, abs(fn(pa) - fn(pb)) / dist)
    return inflate * best


def estimate_kappas(spec: BarrierSpec, y0_dot_fn: Callable[[np.ndarray], np.ndarray],
                    B0_fn: Callable[[np.ndarray], np.ndarray], phi: float, lo, hi,
                    samples: int = 10_000, seed: int = 0) -> tuple[float, float, float, float]:
    """Estimate kappa1..kappa4 over an operating box of outputs.

    ``y0_dot_fn`` and ``B0_fn`` describe how the anchor derivative and input
    matrix vary with the output (e.g. for a fixed input); ``B0`` terms are
    reduced to their norm so the constant is a scalar.
    """
    def lie_y0(y):
        return float(spec.grad_h(y) @ np.atleast_1d(y0_dot_fn(y)))

    def lie_b0(y):
        return float(np.linalg.norm(spec.grad_h(y) @ np.atleast_2d(B0_fn(y))))

    def lie_phi(y):
        return float(np.sum(spec.grad_h(y)) * phi)

    def alpha_h(y):
        return spec.alpha(spec.h(y))

    return tuple(estimate_lipschitz(fn, lo, hi, samples, seed + i)
                 for i, fn in enumerate((lie_y0, lie_b0, lie_phi, alpha_h)))
