"""Low-level tracking of planned splines: PID speed control and Pure Pursuit steering."""
from dataclasses import dataclass, replace
from typing import Dict, Optional, Sequence, Tuple

import numpy as np

from config import ConfigError, check_keys, get_float
from splines import BSpline2D

MAX_STEER = 0.6
ACCEL_MIN = -6.0
ACCEL_MAX = 3.0
INTEGRAL_LIMIT = 5.0
SPEED_DTAU = 1e-3
REFERENCE_SAMPLES = 401

TRACKER_KEYS = {
    "pid.kp": "kp",
    "pid.ki": "ki",
    "pid.kd": "kd",
    "pp.kv": "k_v",
    "pp.lmin": "l_min",
    "vehicle.wheelbase": "wheelbase",
}


@dataclass(frozen=True)
class TrackerConfig:
    """Controller gains and the lookahead law l_d = max(k_v * v_x, l_min)."""

    kp: float = 0.8
    ki: float = 0.1
    kd: float = 0.0
    k_v: float = 0.8
    l_min: float = 5.0
    wheelbase: float = 2.7

    def __post_init__(self):
        for name in ("kp", "ki", "kd", "k_v"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.l_min <= 0:
            raise ValueError("l_min must be positive")
        if self.wheelbase <= 0:
            raise ValueError("wheelbase must be positive")

    def lookahead(self, v_x: float) -> float:
        return max(self.k_v * v_x, self.l_min)

    @classmethod
    def from_mapping(cls, values: Dict[str, str]) -> "TrackerConfig":
        """Read ``pid.*``, ``pp.*`` and ``vehicle.wheelbase`` keys."""
        check_keys(values, TRACKER_KEYS, prefix="pid.")
        check_keys(values, TRACKER_KEYS, prefix="pp.")
        defaults = cls()
        kwargs = {attr: get_float(values, key, getattr(defaults, attr)) for key, attr in TRACKER_KEYS.items()}
        try:
            return cls(**kwargs)
        except ValueError as exc:
            raise ConfigError("pid/pp", str(exc)) from None

    def as_dict(self) -> Dict[str, float]:
        return {key: getattr(self, attr) for key, attr in TRACKER_KEYS.items()}


@dataclass(frozen=True)
class PIDState:
    integral: float = 0.0
    prev_error: float = 0.0
    started: bool = False


@dataclass(frozen=True, eq=False)
class PlanReference:
    """Dense arc-length table of a plan, built once per replanning."""

    spline: BSpline2D
    points: np.ndarray
    arc: np.ndarray

    @classmethod
    def build(cls, spline: BSpline2D, samples: int = REFERENCE_SAMPLES) -> "PlanReference":
        points = spline.sample(samples)
        steps = np.linalg.norm(np.diff(points, axis=0), axis=1)
        return cls(spline, points, np.concatenate([[0.0], np.cumsum(steps)]))

    @property
    def length(self) -> float:
        return float(self.arc[-1])

    def point_at_arc(self, s: float) -> np.ndarray:
        if s <= self.length:
            return np.array([np.interp(s, self.arc, self.points[:, 0]),
                             np.interp(s, self.arc, self.points[:, 1])])
        # past the end: continue along the final chord direction
        tail = self.points[-1] - self.points[-2]
        norm = np.linalg.norm(tail)
        direction = tail / norm if norm > 0 else np.array([1.0, 0.0])
        return self.points[-1] + (s - self.length) * direction

    def nearest_arc(self, xy: Sequence[float]) -> float:
        d2 = np.sum((self.points - np.asarray(xy, dtype=float)) ** 2, axis=1)
        return float(self.arc[int(np.argmin(d2))])


def target_speed(spline: BSpline2D, t_since_plan: float, dtau: float = SPEED_DTAU) -> float:
    """Chord-length speed of the plan at time ``t_since_plan`` (central difference)."""
    tau = min(max(t_since_plan / spline.horizon_s, 0.0), 1.0)
    lo = max(tau - dtau, 0.0)
    hi = min(tau + dtau, 1.0)
    chord = np.linalg.norm(spline.eval(hi) - spline.eval(lo))
    return float(chord / ((hi - lo) * spline.horizon_s))


def reference_from_spline(
    spline: BSpline2D,
    t_since_plan: float,
    lookahead: float = 10.0,
    ego_xy: Sequence[float] = (0.0, 0.0),
    reference: Optional[PlanReference] = None,
) -> Tuple[np.ndarray, float]:
    """
    Pure Pursuit target point and target speed from the current plan.

    The target is the curve point ``lookahead`` meters of arc length beyond the
    point nearest to ``ego_xy`` (both in the frame the plan was made in).

    Args:
        spline: Current plan
        t_since_plan: Seconds since the plan was issued
        lookahead: Arc-length lookahead, meters
        ego_xy: Ego position in the plan frame
        reference: Precomputed arc-length table for ``spline``

    Returns:
        (target point in the plan frame, target speed m/s)
    """
    if not (0.0 <= t_since_plan < spline.horizon_s):
        raise ValueError(f"t_since_plan must be in [0, {spline.horizon_s}), got {t_since_plan}")
    reference = reference or PlanReference.build(spline)
    ego_xy = np.asarray(ego_xy, dtype=float)
    if reference.length < 1e-9:
        # degenerate plan: stop, aim straight ahead
        return ego_xy + np.array([lookahead, 0.0]), 0.0
    s0 = reference.nearest_arc(ego_xy)
    return reference.point_at_arc(s0 + lookahead), target_speed(spline, t_since_plan)


def pure_pursuit(target: Sequence[float], cfg: TrackerConfig, previous_steer: float = 0.0) -> float:
    """
    Steering angle toward a target point in the ego frame.

    A target at or behind the rear axle gives no geometry; the previous
    steering angle is held.
    """
    x_t, y_t = float(target[0]), float(target[1])
    if x_t <= 0.0:
        return previous_steer
    alpha = np.arctan2(y_t, x_t)
    l_d = np.hypot(x_t, y_t)
    delta = np.arctan(2.0 * cfg.wheelbase * np.sin(alpha) / l_d)
    return float(np.clip(delta, -MAX_STEER, MAX_STEER))


def pid_accel(v_target: float, v_actual: float, state: PIDState, dt: float,
              cfg: TrackerConfig = TrackerConfig()) -> Tuple[float, PIDState]:
    """Speed PID with integral clamp; returns (accel, new state)."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    error = v_target - v_actual
    integral = float(np.clip(state.integral + error * dt, -INTEGRAL_LIMIT, INTEGRAL_LIMIT))
    derivative = (error - state.prev_error) / dt if state.started else 0.0
    accel = cfg.kp * error + cfg.ki * integral + cfg.kd * derivative
    accel = float(np.clip(accel, ACCEL_MIN, ACCEL_MAX))
    return accel, replace(state, integral=integral, prev_error=error, started=True)
