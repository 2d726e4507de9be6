import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from incbf.cbf import ErrorBounds
from incbf.config import load_preset
from incbf.errors import ConfigError, SingularityError
from incbf.harness import run_scenario
from incbf.incmodel import (IncrementState, SensorModel, TruncationSpec, advance_anchor,
                            corrupt_measurements, disturbance_magnitude, incremental_controller,
                            sigma_residual, truncation_bound)
from incbf.plants import SisoPlant


def test_advance_anchor_zero_and_constant():
    z = IncrementState.zeros(1, 1, 1e-3)
    nxt = advance_anchor(z, [0.0], [0.0], [0.0], [[0.0]])
    assert nxt.y0.tolist() == [0.0] and nxt.B0.tolist() == [[0.0]] and nxt.dt == 1e-3
    st_ = z
    for _ in range(5):
        st_ = advance_anchor(st_, [0.3], [0.2], [-0.1], [[1.0]])
        assert st_.y0.tolist() == [0.3] and st_.u0.tolist() == [0.2]
        assert st_.y0_dot_meas.tolist() == [-0.1]


def test_siso_input_matrix_is_bp():
    plant = SisoPlant()
    for y in (-0.4, 0.0, 0.7):
        assert plant.input_matrix([y]).tolist() == [[1.0]]


def test_increment_state_validation():
    with pytest.raises(ValueError):
        IncrementState([0.0], [0.0], [0.0], [[1.0]], 0.0)
    with pytest.raises(ValueError):
        IncrementState([0.0], [0.0], [0.0, 1.0], [[1.0]], 1e-3)
    with pytest.raises(ValueError):
        IncrementState([0.0], [0.0, 0.0], [0.0], [[1.0, 2.0, 3.0]], 1e-3)


def test_incremental_controller_examples():
    inc = IncrementState([0.2], [0.0], [0.1], [[1.0]], 1e-3)
    assert incremental_controller([0.1], inc).tolist() == [0.0]
    assert incremental_controller([-3 * 0.2], inc)[0] == pytest.approx(-0.7, abs=1e-15)
    inc2 = IncrementState([0.0], [0.0], [0.0], [[2.0]], 1e-3)
    assert incremental_controller([1.0], inc2).tolist() == [0.5]


def test_incremental_controller_singular():
    with pytest.raises(SingularityError):
        incremental_controller([1.0], IncrementState([0.0], [0.0], [0.0], [[0.0]], 1e-3))
    with pytest.raises(SingularityError):
        incremental_controller([1.0], IncrementState([0.0], [0.0] * 4, [0.0],
                                                     [[1.0, 1.0, 1.0, 1.0]], 1e-3))
    with pytest.raises(SingularityError):
        incremental_controller([1.0, 1.0], IncrementState(
            [0.0, 0.0], [0.0, 0.0], [0.0, 0.0], [[1.0, 1.0], [1.0, 1.0 + 1e-12]], 1e-3))


def test_incremental_controller_inversion_random():
    rng = np.random.default_rng(5)
    for _ in range(200):
        n = int(rng.integers(1, 5))
        B0 = rng.normal(size=(n, n)) + 3 * np.eye(n)
        if np.linalg.cond(B0) > 1e4:
            continue
        yd = rng.normal(size=n)
        nu = rng.normal(size=n)
        du = incremental_controller(nu, IncrementState(np.zeros(n), np.zeros(n), yd, B0, 1e-3))
        assert np.max(np.abs(B0 @ du + yd - nu)) <= 1e-10


def test_truncation_bound_examples():
    assert truncation_bound(TruncationSpec(2.0), [0.0]) == 0.0
    assert truncation_bound(TruncationSpec(2.0, 1), [0.1]) == pytest.approx(0.01)
    assert truncation_bound(TruncationSpec(6.0, 2), [0.1]) == pytest.approx(0.001)
    with pytest.raises(ValueError):
        TruncationSpec(math.inf)
    with pytest.raises(ValueError):
        TruncationSpec(1.0, 0)


def test_sigma_residual_examples():
    assert sigma_residual([[-1.0]], [0.0], 0.0) == 0.0
    assert sigma_residual([[-1.0]], [0.05], 0.01) == pytest.approx(0.06)
    spec = TruncationSpec(2.0)
    full = sigma_residual([[-1.0]], [0.1], truncation_bound(spec, [0.1]))
    half = sigma_residual([[-1.0]], [0.05], truncation_bound(spec, [0.05]))
    assert half < 0.5 * full


def test_disturbance_magnitude_examples():
    assert disturbance_magnitude(3.0, ErrorBounds()) == 0.0
    assert disturbance_magnitude(3.0, ErrorBounds(0.05, 0.1, 0.1)) == pytest.approx(0.45)
    assert disturbance_magnitude(3.0, ErrorBounds(0.05, 0.0, 0.1)) == pytest.approx(0.15)


def test_corrupt_measurements_examples():
    ident = SensorModel()
    y, yd = corrupt_measurements(ident, [0.3], [-1.0], 2.0)
    assert y.tolist() == [0.3] and yd.tolist() == [-1.0]
    xi = 2.0
    s = SensorModel(lambda t, y: np.full(y.shape, 0.1 * math.sin(xi * t)),
                    lambda t, y: np.full(y.shape, 0.1 * math.sin(xi * t)), 0.1, 0.1)
    y, _ = corrupt_measurements(s, [0.3], [0.0], math.pi / (2 * xi))
    assert y[0] == pytest.approx(0.4, abs=1e-15)
    bad = SensorModel(lambda t, y: np.full(y.shape, 0.2 * math.sin(t)), eps=0.1, theta=0.1)
    with pytest.raises(ConfigError, match="t=1.5"):
        corrupt_measurements(bad, [0.0], [0.0], 1.5)


@settings(max_examples=50, deadline=None)
@given(st.floats(0.0, 1.0), st.floats(-2.0, 2.0), st.floats(0.0, 100.0))
def test_sensor_audit_records_maxima(gamma, y, t):
    s = SensorModel(lambda t, y: np.full(y.shape, gamma * math.sin(t)),
                    lambda t, y: np.full(y.shape, gamma * math.cos(t)), gamma, gamma)
    corrupt_measurements(s, [y], [0.0], t)
    assert s.max_e <= gamma + 1e-12 and s.max_w <= gamma + 1e-12


@pytest.fixture(scope="module")
def sigma_runs():
    out = {}
    for dt in (4e-3, 2e-3, 1e-3):
        cfg = load_preset("siso-paper", {"filter.kind": "none", "timing.dt": dt,
                                         "timing.t_end": 10})
        out[dt] = run_scenario(cfg)[1].max_sigma
    return out


def test_sigma_decays_first_order(sigma_runs):
    for coarse, fine in ((4e-3, 2e-3), (2e-3, 1e-3)):
        ratio = sigma_runs[fine] / sigma_runs[coarse]
        assert 0.4 <= ratio <= 0.6, ratio
