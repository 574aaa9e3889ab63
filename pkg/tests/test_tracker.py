import numpy as np
import pytest

from config import ConfigError
from splines import BSpline2D
from tracker import (
    ACCEL_MAX,
    INTEGRAL_LIMIT,
    MAX_STEER,
    PIDState,
    PlanReference,
    TrackerConfig,
    pid_accel,
    pure_pursuit,
    reference_from_spline,
    target_speed,
)

STRAIGHT_30 = BSpline2D.from_coefficients([200.0, 0.0, 400.0, 0.0, 600.0, 0.0])
CURVED = BSpline2D.from_coefficients([150.0, 2.0, 330.0, 12.0, 480.0, 40.0])


def test_straight_spline_reference():
    target, speed = reference_from_spline(STRAIGHT_30, 0.0, lookahead=10.0)
    np.testing.assert_allclose(target, [10.0, 0.0], atol=1e-9)
    assert speed == pytest.approx(30.0, rel=1e-9)
    for t in (3.0, 11.5, 19.9):
        assert target_speed(STRAIGHT_30, t) == pytest.approx(30.0, rel=1e-9)


def test_reference_follows_ego_along_plan():
    reference = PlanReference.build(STRAIGHT_30)
    target, _ = reference_from_spline(STRAIGHT_30, 2.0, 10.0, ego_xy=(60.0, 0.2), reference=reference)
    np.testing.assert_allclose(target, [70.0, 0.0], atol=0.05)


@pytest.mark.parametrize("t", [1.0, 7.3, 15.0])
def test_curved_speed_matches_derivative(t):
    eps = 1e-6
    tau = t / CURVED.horizon_s
    oracle = np.linalg.norm(CURVED.eval(tau + eps) - CURVED.eval(tau - eps)) / (2 * eps * CURVED.horizon_s)
    assert target_speed(CURVED, t) == pytest.approx(oracle, rel=0.01)


def test_reference_time_window():
    with pytest.raises(ValueError):
        reference_from_spline(STRAIGHT_30, 20.0)
    with pytest.raises(ValueError):
        reference_from_spline(STRAIGHT_30, -0.5)


def test_degenerate_plan_stops():
    stopped = BSpline2D.from_coefficients(np.zeros(6))
    target, speed = reference_from_spline(stopped, 1.0, lookahead=8.0)
    assert speed == 0.0
    np.testing.assert_allclose(target, [8.0, 0.0])


def test_pure_pursuit_geometry():
    cfg = TrackerConfig()
    assert pure_pursuit((10.0, 0.0), cfg) == 0.0
    target = (10.0 * np.cos(0.1), 10.0 * np.sin(0.1))
    expected = np.arctan(2 * 2.7 * np.sin(0.1) / 10.0)
    assert pure_pursuit(target, cfg) == pytest.approx(expected, rel=1e-12)
    assert expected == pytest.approx(0.0539, abs=1e-4)
    assert pure_pursuit((target[0], -target[1]), cfg) == pytest.approx(-expected, rel=1e-12)


def test_pure_pursuit_clamps_and_holds():
    cfg = TrackerConfig()
    assert pure_pursuit((0.5, 3.0), cfg) == MAX_STEER
    assert pure_pursuit((-4.0, 1.0), cfg, previous_steer=0.12) == 0.12


def test_pid_equilibrium_and_proportional():
    accel, _ = pid_accel(25.0, 25.0, PIDState(), 0.01)
    assert accel == 0.0
    cfg = TrackerConfig(kp=0.8, ki=0.0, kd=0.0)
    accel, state = pid_accel(32.0, 30.0, PIDState(), 0.01, cfg)
    assert accel == pytest.approx(1.6)
    assert state.prev_error == 2.0 and state.started


def test_pid_saturates_with_anti_windup():
    state = PIDState()
    for _ in range(2000):
        accel, state = pid_accel(40.0, 30.0, state, 0.01)
        assert accel <= ACCEL_MAX
        assert abs(state.integral) <= INTEGRAL_LIMIT
    assert accel == ACCEL_MAX
    assert state.integral == INTEGRAL_LIMIT


def test_pid_rejects_bad_dt():
    with pytest.raises(ValueError):
        pid_accel(1.0, 0.0, PIDState(), 0.0)


def test_tracker_config_from_mapping():
    cfg = TrackerConfig.from_mapping({"pid.kp": "1.2", "pp.lmin": "6", "road.kind": "straight"})
    assert cfg.kp == 1.2 and cfg.l_min == 6.0 and cfg.ki == 0.1
    assert cfg.lookahead(5.0) == 6.0
    assert cfg.lookahead(30.0) == pytest.approx(24.0)
    with pytest.raises(ConfigError) as err:
        TrackerConfig.from_mapping({"pid.kq": "1"})
    assert err.value.key == "pid.kq"
    with pytest.raises(ConfigError):
        TrackerConfig.from_mapping({"pp.lmin": "0"})
