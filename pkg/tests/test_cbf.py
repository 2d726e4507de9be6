import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from incbf import cbf
from incbf.cbf import (ADDITIVE, PRODUCT, BarrierSpec, CbfConstraint, ErrorBounds,
                       barrier_margin, estimate_kappas, estimate_lipschitz, grad_norm_sup,
                       icbf_constraint, lower_limit, mricbf_constraint,
                       mricbf_constraint_fixed_point, mricbf_terms, mricbf_tightening,
                       norm_ball, ricbf_constraint, standard_cbf_constraint, upper_limit,
                       worst_case_phi)
from incbf.errors import InfeasibleError
from incbf.qp import QpProblem, solve_active_set

DEG = math.pi / 180


def one_minus_x():
    return BarrierSpec(lambda x: 1.0 - x[0], lambda x: np.array([-1.0]), 1.0)


# standard -----------------------------------------------------------------------


def test_standard_upper_bound_at_origin():
    c = standard_cbf_constraint(one_minus_x(), [0.0], [[1.0]], [0.0])
    assert c.a.tolist() == [-1.0] and c.b == -1.0
    assert c.kind == cbf.STANDARD


def test_standard_unactuated_interior():
    spec = upper_limit(1.0, gamma=2.0)
    c = standard_cbf_constraint(spec, [0.0], [[0.0]], [0.25])
    assert c.a.tolist() == [0.0]
    assert c.b == pytest.approx(-1.5)
    assert c.margin([123.0]) >= 0.0


def test_standard_lie_derivatives():
    spec = BarrierSpec(lambda x: x[0], lambda x: np.array([1.0]), 1.0)
    c = standard_cbf_constraint(spec, [-2.0], [[1.0]], [2.0])
    assert c.a.tolist() == [1.0] and c.b == 0.0


# icbf / ricbf ------------------------------------------------------------------------


def test_icbf_example():
    spec = BarrierSpec(lambda y: 0.5, lambda y: np.array([-1.0]), 2.0)
    c = icbf_constraint(spec, [0.2], [[1.0]], [0.0])
    assert c.a.tolist() == [-1.0]
    assert c.b == pytest.approx(-0.8, abs=1e-15)


def test_icbf_boundary_without_drift():
    spec = upper_limit(0.5)
    c = icbf_constraint(spec, [0.0], [[2.0]], [0.5])
    assert c.b == 0.0
    assert c.a.tolist() == [-2.0]


def test_icbf_gamma_scaling_relaxes_by_gamma_h():
    c1 = icbf_constraint(upper_limit(0.5, 1.0), [0.1], [[1.0]], [0.2])
    c2 = icbf_constraint(upper_limit(0.5, 2.0), [0.1], [[1.0]], [0.2])
    assert c1.b - c2.b == pytest.approx(1.0 * 0.3)


def test_ricbf_examples():
    spec = BarrierSpec(lambda y: 0.5, lambda y: np.array([-1.0]), 2.0)
    base = icbf_constraint(spec, [0.2], [[1.0]], [0.0])
    assert ricbf_constraint(spec, [0.2], [[1.0]], [0.0], 0.0) == CbfConstraint(base.a, base.b, "ricbf")
    c = ricbf_constraint(spec, [0.2], [[1.0]], [0.0], 0.3)
    assert c.b == pytest.approx(-0.5)
    assert np.array_equal(c.a, base.a)
    with pytest.raises(ValueError):
        ricbf_constraint(spec, [0.2], [[1.0]], [0.0], -0.1)


def test_worst_case_phi_examples():
    spec = upper_limit(1.0)
    assert worst_case_phi(spec, ErrorBounds(0.0, 0, 0), 1.0) == 0.0
    assert worst_case_phi(spec, ErrorBounds(0.1, 0, 0), 1.0) == pytest.approx(0.1)
    assert worst_case_phi(spec, ErrorBounds(0.05, 0, 0), 2.0) == pytest.approx(0.1)
    # unit gradient box barrier: sup over the box is 1
    assert grad_norm_sup(spec, [-2.0], [2.0], samples=50) == 1.0


# mricbf ------------------------------------------------------------------------------


def test_mricbf_terms_examples():
    assert mricbf_terms(ErrorBounds(0.0, 0.0, 0.0, (1, 2, 3, 4))) == (0.0, 0.0)
    a, b = mricbf_terms(ErrorBounds(0.0, 0.1, 0.0, (1, 2, 0.5, 1.5)))
    assert a == pytest.approx(0.3) and b == pytest.approx(0.2)
    assert mricbf_terms(ErrorBounds(0.0, 0.1, 0.0, (0, 0, 0, 0))) == (0.0, 0.0)


def test_tightening_forms():
    bounds = ErrorBounds(0.0, 0.1, 0.0, (1, 2, 0.5, 1.5))
    assert mricbf_tightening(bounds, 0.5, ADDITIVE) == pytest.approx(0.3 + 0.2 * 0.5)
    assert mricbf_tightening(bounds, 0.5, PRODUCT) == pytest.approx(0.5 * 0.5)
    with pytest.raises(ValueError):
        mricbf_tightening(bounds, 0.5, "cubic")


def test_error_bounds_validation():
    with pytest.raises(ValueError):
        ErrorBounds(-0.1, 0.0, 0.0)
    with pytest.raises(ValueError):
        ErrorBounds(0.0, math.nan, 0.0)
    with pytest.raises(ValueError):
        ErrorBounds(0.0, 0.0, 0.0, (1, 2, 3))
    with pytest.raises(ValueError):
        BarrierSpec(lambda y: 0.0, lambda y: np.zeros(1), gamma=0.0)


def scalar_builder(ref, lo=-0.8, hi=0.8):
    def build(constraints):
        return solve_active_set(QpProblem(1, [ref], [c.as_row() for c in constraints],
                                          ([lo], [hi])))
    return build


def test_fixed_point_zero_bounds_is_ricbf():
    spec = upper_limit(0.5)
    base = [ricbf_constraint(spec, [0.3], [[1.0]], [0.45], 0.0)]
    res = mricbf_constraint_fixed_point(base, ErrorBounds(0.0, 0.0, 0.0), scalar_builder(1.0))
    assert res.iterations == 1 and not res.fallback
    assert res.constraints[0].b == base[0].b
    assert np.array_equal(res.constraints[0].a, base[0].a)
    direct = scalar_builder(1.0)(base)
    assert np.array_equal(res.solution.delta_u, direct.delta_u)


def test_fixed_point_converges_and_is_consistent():
    spec = upper_limit(0.5)
    bounds = ErrorBounds(0.0, 0.1, 0.0, (1, 2, 0, 1))
    base = [ricbf_constraint(spec, [0.3], [[1.0]], [0.45], 0.01)]
    res = mricbf_constraint_fixed_point(base, bounds, scalar_builder(1.0))
    assert not res.fallback and res.iterations <= 10
    # the returned constraint is tightened with the norm of its own solution
    expected_b = base[0].b + mricbf_tightening(bounds, res.du_norm)
    assert res.constraints[0].b == pytest.approx(expected_b, abs=1e-6)
    assert res.constraints[0].margin(res.solution.delta_u) >= -1e-12


class _Flip:
    """Fake QP that alternates between two increments so the iteration never settles."""

    def __init__(self):
        self.calls = 0
        self.seen = []

    def __call__(self, constraints):
        self.calls += 1
        self.seen.append(constraints[0].b)

        class Sol:
            delta_u = np.array([0.1 if self.calls % 2 else 0.7])
        return Sol()


def test_fixed_point_fallback_product_form():
    bounds = ErrorBounds(0.0, 0.1, 0.0, (1, 4, 0, 0))  # a + b = 0.1 + 0.4 = 0.5
    phi = 0.2
    base = [CbfConstraint(np.array([1.0]), phi, cbf.RICBF)]
    flip = _Flip()
    res = mricbf_constraint_fixed_point(base, bounds, flip, du_max_norm=0.8, form=PRODUCT)
    assert res.fallback and flip.calls == 11
    assert res.constraints[0].b == pytest.approx(phi + 0.4)


def test_fixed_point_fallback_needs_box():
    bounds = ErrorBounds(0.0, 0.1, 0.0, (0, 1, 0, 0))
    with pytest.raises(InfeasibleError):
        mricbf_constraint_fixed_point([CbfConstraint(np.array([1.0]), 0.0, cbf.RICBF)],
                                      bounds, _Flip())


def test_reduction_chain_and_monotonicity():
    rng = np.random.default_rng(3)
    spec = norm_ball(1.0, gamma=1.5)
    for _ in range(200):
        y = rng.uniform(-1, 1, 2)
        y0 = rng.normal(size=2)
        B0 = rng.normal(size=(2, 3))
        du_norm = abs(rng.normal())
        kappa = tuple(rng.uniform(0, 2, 4))
        sb = rng.uniform(0, 0.1)
        ic = icbf_constraint(spec, y0, B0, y)
        ri = ricbf_constraint(spec, y0, B0, y, 0.0)
        assert np.array_equal(ri.a, ic.a) and ri.b == ic.b
        phi = worst_case_phi(spec, ErrorBounds(sb, 0, 0), 2.0)
        mr = mricbf_constraint(spec, y0, B0, y, phi, ErrorBounds(sb, 0.0, 0.0, kappa), du_norm)
        ri2 = ricbf_constraint(spec, y0, B0, y, phi)
        assert np.array_equal(mr.a, ri2.a) and mr.b == ri2.b
        # tightening never loosens when a bound grows
        small = mricbf_constraint(spec, y0, B0, y, phi, ErrorBounds(sb, 0.05, 0.0, kappa), du_norm)
        big = mricbf_constraint(spec, y0, B0, y, phi, ErrorBounds(sb, 0.1, 0.0, kappa), du_norm)
        assert big.b >= small.b
        k2 = tuple(k + 0.1 for k in kappa)
        bigger_k = mricbf_constraint(spec, y0, B0, y, phi, ErrorBounds(sb, 0.05, 0.0, k2), du_norm)
        assert bigger_k.b >= small.b
        phi_big = worst_case_phi(spec, ErrorBounds(sb + 0.01, 0, 0), 2.0)
        assert ricbf_constraint(spec, y0, B0, y, phi_big).b >= ri2.b


@pytest.mark.parametrize("spec", [upper_limit(0.5), lower_limit(-0.5), norm_ball(1.0),
                                  upper_limit(2.0, index=1, dim=3)])
def test_gradient_matches_finite_differences(spec):
    rng = np.random.default_rng(11)
    dim = spec.grad_h(np.zeros(3 if "2" in spec.name else 2)).size
    for _ in range(100):
        y = rng.uniform(-2, 2, dim)
        g = spec.grad_h(y)
        fd = np.empty(dim)
        for i in range(dim):
            e = np.zeros(dim)
            e[i] = 1e-6
            fd[i] = (spec.h(y + e) - spec.h(y - e)) / 2e-6
        assert np.linalg.norm(g - fd) <= 1e-4 * max(1.0, np.linalg.norm(g))


@settings(max_examples=60, deadline=None)
@given(st.floats(-0.3, 0.3), st.floats(0.5, 2.0), st.floats(0.0, 0.02),
       st.floats(0.0, 0.1), st.floats(-1.0, 1.0))
def test_filter_discharges_worst_case_at_boundary(y0_dot, b0, sigma_bar, eps, ref):
    # h(y) = 0 on the upper limit: the returned du must give a non-negative worst-case rate
    spec = upper_limit(0.5)
    bounds = ErrorBounds(sigma_bar, eps, 0.0, (1.0, 0.5, 0.0, 1.0))
    phi = worst_case_phi(spec, bounds, 1.0)
    base = [ricbf_constraint(spec, [y0_dot], [[b0]], [0.5], phi)]
    res = mricbf_constraint_fixed_point(base, bounds, scalar_builder(ref, -5, 5),
                                        du_max_norm=5.0)
    du = res.solution.delta_u
    theta = phi + mricbf_tightening(bounds, float(np.linalg.norm(du)))
    if res.fallback:
        theta = phi + mricbf_tightening(bounds, 5.0)
    rate = float(spec.grad_h(np.array([0.5])) @ (np.array([y0_dot]) + np.array([[b0]]) @ du))
    assert rate - theta >= -1e-6


def test_barrier_margin_examples():
    assert barrier_margin(upper_limit(0.5), [0.5]) == 0.0
    assert barrier_margin(lower_limit(-1.0), [0.0]) == 1.0
    assert barrier_margin(upper_limit(10 * DEG), [4 * DEG]) == pytest.approx(6 * DEG)


def test_lipschitz_estimates():
    # exact constants: |2y| on [-1, 1] has Lipschitz constant 2
    est = estimate_lipschitz(lambda y: 2.0 * y[0], [-1.0], [1.0], samples=2000)
    assert est == pytest.approx(2.2, rel=1e-9)
    ks = estimate_kappas(upper_limit(0.5, gamma=3.0), lambda y: -y, lambda y: np.eye(1),
                         0.0, [-0.5], [0.5], samples=2000)
    assert ks[0] == pytest.approx(1.1) and ks[1] == pytest.approx(0.0)
    assert ks[2] == 0.0 and ks[3] == pytest.approx(3.3)
