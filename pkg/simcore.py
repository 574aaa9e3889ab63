"""Deterministic closed-loop driving world: road, ego, lead, virtual sensors and safety monitor."""
from dataclasses import dataclass, field, replace
from functools import partial
from pathlib import Path
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from scipy.integrate import cumulative_trapezoid
from scipy.interpolate import CubicSpline
from tqdm import tqdm
from tqdm.contrib.concurrent import process_map

from config import ConfigError, check_keys, get_float, get_int, get_str, load_kv_file
from policy_net import FeatureVector, PolicyNetwork, forward
from splines import DEFAULT_KNOTS, BSpline2D, KnotVector, fit_spline
from tracker import (
    ACCEL_MAX,
    ACCEL_MIN,
    MAX_STEER,
    TRACKER_KEYS,
    PIDState,
    PlanReference,
    TrackerConfig,
    pid_accel,
    pure_pursuit,
    reference_from_spline,
)

SIM_DT = 0.01
SAMPLE_SPACING = 0.5
ROAD_EXTENSION = 200.0
PROJECTION_WINDOW = 30.0
SENSOR_RANGE = 60.0
SENSOR_STEP = 5.0
MAX_RUN_TIME = 600.0

MIXED_LEAD_IN = 200.0
MIXED_BEND_LENGTH = (2500.0, 4000.0)
MIXED_STRAIGHT_LENGTH = (200.0, 800.0)

TRACE_COLUMNS = ["t", "X", "Y", "heading", "vx", "offset", "gap", "vlead", "flag"]
FLAG_NONE = "none"

SCENARIO_KEYS = (
    "name", "seed", "duration",
    "road.kind", "road.length", "road.radius", "road.lane_width", "road.direction",
    "road.min_radius", "road.max_radius",
    "ego.speed", "ego.station", "ego.offset",
    "lead.gap", "lead.speed", "lead.speed_noise",
    "vehicle.track", "vehicle.wheelbase",
)

Policy = Callable[[FeatureVector, float], np.ndarray]


# ---------------------------------------------------------------------------
# Road geometry
# ---------------------------------------------------------------------------

def _integrate_segments(segments: Sequence[Tuple[float, float]], spacing: float):
    """Sample a chain of constant-curvature segments (length, curvature) starting at the origin."""
    lengths = np.array([s[0] for s in segments], dtype=float)
    curvatures = np.array([s[1] for s in segments], dtype=float)
    starts = np.concatenate([[0.0], np.cumsum(lengths)])
    poses = [(0.0, 0.0, 0.0)]
    for seg_len, kappa in segments:
        x0, y0, th0 = poses[-1]
        th1 = th0 + kappa * seg_len
        if kappa == 0.0:
            poses.append((x0 + seg_len * np.cos(th0), y0 + seg_len * np.sin(th0), th0))
        else:
            poses.append((x0 + (np.sin(th1) - np.sin(th0)) / kappa,
                          y0 - (np.cos(th1) - np.cos(th0)) / kappa, th1))
    total = starts[-1]
    stations = np.arange(0.0, total + 1e-9, spacing)
    if stations[-1] < total:
        stations = np.append(stations, total)
    idx = np.clip(np.searchsorted(starts, stations, side="right") - 1, 0, len(segments) - 1)
    pose = np.array(poses[:-1])
    local = stations - starts[idx]
    kappa = curvatures[idx]
    x0, y0, th0 = pose[idx, 0], pose[idx, 1], pose[idx, 2]
    heading = th0 + kappa * local
    straight = kappa == 0.0
    safe_k = np.where(straight, 1.0, kappa)
    xs = np.where(straight, x0 + local * np.cos(th0), x0 + (np.sin(heading) - np.sin(th0)) / safe_k)
    ys = np.where(straight, y0 + local * np.sin(th0), y0 - (np.cos(heading) - np.cos(th0)) / safe_k)
    return stations, xs, ys, heading


@dataclass(frozen=True, eq=False)
class RoadGeometry:
    """Lane centerline sampled by arc length; parallel lanes share the lane width."""

    kind: str
    length: float
    lane_width: float
    stations: np.ndarray = field(repr=False)
    xs: np.ndarray = field(repr=False)
    ys: np.ndarray = field(repr=False)
    headings: np.ndarray = field(repr=False)
    radius: Optional[float] = None

    def __post_init__(self):
        if self.kind == "arc" and (self.radius is None or abs(self.radius) < 100.0):
            raise ValueError("arc roads need |radius| >= 100 m")
        if self.length <= 0:
            raise ValueError("road length must be positive")
        if self.lane_width <= 0:
            raise ValueError("lane width must be positive")

    @classmethod
    def from_segments(cls, kind: str, segments: Sequence[Tuple[float, float]], length: float,
                      lane_width: float = 3.5, radius: Optional[float] = None) -> "RoadGeometry":
        stations, xs, ys, headings = _integrate_segments(segments, SAMPLE_SPACING)
        return cls(kind, length, lane_width, stations, xs, ys, headings, radius)

    @classmethod
    def from_curvature(cls, kind: str, stations: np.ndarray, curvature: np.ndarray, length: float,
                       lane_width: float = 3.5) -> "RoadGeometry":
        """Centerline integrated from curvature sampled at ``stations`` (first station 0, heading 0)."""
        stations = np.asarray(stations, dtype=float)
        headings = cumulative_trapezoid(np.asarray(curvature, dtype=float), stations, initial=0.0)
        xs = cumulative_trapezoid(np.cos(headings), stations, initial=0.0)
        ys = cumulative_trapezoid(np.sin(headings), stations, initial=0.0)
        return cls(kind, length, lane_width, stations, xs, ys, headings)

    @classmethod
    def from_centerline(cls, points: np.ndarray, lane_width: float) -> "RoadGeometry":
        """Road through recorded centerline points, densified with a cubic spline."""
        points = np.asarray(points, dtype=float)
        chord = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(points, axis=0), axis=1))])
        if len(points) < 4 or np.any(np.diff(chord) <= 0):
            raise ValueError("recorded centerline needs at least 4 distinct points")
        spline_x = CubicSpline(chord, points[:, 0])
        spline_y = CubicSpline(chord, points[:, 1])
        stations = np.arange(0.0, chord[-1] + 1e-9, SAMPLE_SPACING)
        xs, ys = spline_x(stations), spline_y(stations)
        headings = np.unwrap(np.arctan2(spline_y(stations, 1), spline_x(stations, 1)))
        # straight extension past the recorded end
        ext = np.arange(SAMPLE_SPACING, ROAD_EXTENSION + 1e-9, SAMPLE_SPACING)
        stations = np.concatenate([stations, stations[-1] + ext])
        xs = np.concatenate([xs, xs[-1] + ext * np.cos(headings[-1])])
        ys = np.concatenate([ys, ys[-1] + ext * np.sin(headings[-1])])
        headings = np.concatenate([headings, np.full(len(ext), headings[-1])])
        return cls("recorded", float(chord[-1]), lane_width, stations, xs, ys, headings)

    def position(self, s: float) -> np.ndarray:
        s_end = self.stations[-1]
        if s < 0.0:
            return np.array([self.xs[0], self.ys[0]]) + s * np.array([np.cos(self.headings[0]), np.sin(self.headings[0])])
        if s > s_end:
            return np.array([self.xs[-1], self.ys[-1]]) + (s - s_end) * np.array(
                [np.cos(self.headings[-1]), np.sin(self.headings[-1])])
        return np.array([np.interp(s, self.stations, self.xs), np.interp(s, self.stations, self.ys)])

    def heading(self, s: float) -> float:
        return float(np.interp(s, self.stations, self.headings))

    def lateral_point(self, s: float, offset: float) -> np.ndarray:
        """Point ``offset`` meters left of the centerline at station ``s``."""
        th = self.heading(s)
        return self.position(s) + offset * np.array([-np.sin(th), np.cos(th)])

    def lateral_points(self, s: np.ndarray, offset: float) -> np.ndarray:
        th = np.interp(s, self.stations, self.headings)
        base = np.column_stack([np.interp(s, self.stations, self.xs), np.interp(s, self.stations, self.ys)])
        past = s > self.stations[-1]
        if np.any(past):
            extra = (s[past] - self.stations[-1])[:, None]
            base[past] = np.array([self.xs[-1], self.ys[-1]]) + extra * np.array(
                [np.cos(self.headings[-1]), np.sin(self.headings[-1])])
        return base + offset * np.column_stack([-np.sin(th), np.cos(th)])

    def project(self, xy: Sequence[float], hint: Optional[float] = None) -> Tuple[float, float]:
        """(station, signed lateral offset, left positive) of a global point."""
        q = np.asarray(xy, dtype=float)
        if hint is None:
            lo, hi = 0, len(self.stations) - 1
        else:
            lo = max(int(np.searchsorted(self.stations, hint - PROJECTION_WINDOW)) - 1, 0)
            hi = min(int(np.searchsorted(self.stations, hint + PROJECTION_WINDOW)) + 1, len(self.stations) - 1)
        px, py = self.xs[lo:hi + 1], self.ys[lo:hi + 1]
        dx, dy = np.diff(px), np.diff(py)
        seg_len_sq = dx * dx + dy * dy
        u = np.clip(((q[0] - px[:-1]) * dx + (q[1] - py[:-1]) * dy) / seg_len_sq, 0.0, 1.0)
        nx, ny = px[:-1] + u * dx, py[:-1] + u * dy
        d2 = (q[0] - nx) ** 2 + (q[1] - ny) ** 2
        i = int(np.argmin(d2))
        seg_len = np.sqrt(seg_len_sq[i])
        station = self.stations[lo + i] + u[i] * seg_len
        offset = (dx[i] * (q[1] - py[i]) - dy[i] * (q[0] - px[i])) / seg_len
        return float(station), float(offset)


def straight_road(length: float, lane_width: float = 3.5) -> RoadGeometry:
    return RoadGeometry.from_segments("straight", [(length + ROAD_EXTENSION, 0.0)], length, lane_width)


def arc_road(radius: float, length: float, lane_width: float = 3.5, direction: int = 1) -> RoadGeometry:
    """Constant-radius road; ``direction`` +1 turns left, -1 right."""
    if abs(radius) < 100.0:
        raise ValueError("arc roads need radius >= 100 m")
    kappa = float(np.sign(direction)) / abs(radius)
    return RoadGeometry.from_segments("arc", [(length + ROAD_EXTENSION, kappa)], length, lane_width,
                                      radius=abs(radius) * np.sign(direction))


def mixed_road(length: float, seed: int, lane_width: float = 3.5,
               min_radius: float = 2000.0, max_radius: float = 4000.0) -> RoadGeometry:
    """
    Seeded expert data road: straights joined by smooth left/right bends.

    Each bend is a raised-cosine curvature bump, so curvature and its slope
    are continuous; ``min_radius``/``max_radius`` bound the radius at the
    apex of a bend.
    """
    if min_radius < 100.0 or max_radius < min_radius:
        raise ValueError("need 100 <= min_radius <= max_radius")
    rng = np.random.default_rng(seed)
    stations = np.arange(0.0, length + ROAD_EXTENSION + 1e-9, SAMPLE_SPACING)
    curvature = np.zeros_like(stations)
    start = MIXED_LEAD_IN
    while start < stations[-1]:
        bend = float(rng.uniform(*MIXED_BEND_LENGTH))
        apex = float(rng.choice([-1.0, 1.0])) / float(rng.uniform(min_radius, max_radius))
        inside = (stations >= start) & (stations < start + bend)
        u = (stations[inside] - start) / bend
        curvature[inside] = apex * 0.5 * (1.0 - np.cos(2.0 * np.pi * u))
        start += bend + float(rng.uniform(*MIXED_STRAIGHT_LENGTH))
    return RoadGeometry.from_curvature("mixed", stations, curvature, length, lane_width)


# ---------------------------------------------------------------------------
# Scenario and state
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ScenarioConfig:
    """Declarative closed-loop scenario."""

    road: RoadGeometry
    ego_speed: float
    lead_gap: float
    lead_speed: float = 0.0
    lead_profile: Optional[Tuple[Tuple[float, float], ...]] = None
    ego_station: float = 0.0
    ego_offset: float = 0.0
    seed: int = 0
    duration: Optional[float] = None
    track: float = 1.8
    wheelbase: float = 2.7
    lead_speed_noise: float = 0.0
    name: str = "scenario"

    def __post_init__(self):
        if self.lead_gap <= 0:
            raise ValueError("lead gap must be positive")
        if self.ego_speed < 0 or self.lead_speed < 0:
            raise ValueError("speeds must be non-negative")
        if not (0.0 < self.track < self.road.lane_width):
            raise ValueError("vehicle track must be positive and below the lane width")
        if self.duration is not None and self.duration <= 0:
            raise ValueError("duration must be positive")
        if self.lead_profile is not None:
            times = [p[0] for p in self.lead_profile]
            if len(times) < 1 or any(b <= a for a, b in zip(times, times[1:])):
                raise ValueError("lead profile times must be strictly increasing")

    def lead_speed_at(self, t: float) -> float:
        if self.lead_profile is None:
            return self.lead_speed
        times, speeds = zip(*self.lead_profile)
        return float(max(np.interp(t, times, speeds), 0.0))


def _build_road(values: Dict[str, str]) -> RoadGeometry:
    kind = get_str(values, "road.kind", "straight")
    length = get_float(values, "road.length", 1000.0)
    lane_width = get_float(values, "road.lane_width", 3.5)
    try:
        if kind == "straight":
            return straight_road(length, lane_width)
        if kind == "arc":
            return arc_road(get_float(values, "road.radius"), length, lane_width,
                            get_int(values, "road.direction", 1))
        if kind == "mixed":
            return mixed_road(length, get_int(values, "seed", 0), lane_width,
                              get_float(values, "road.min_radius", 2000.0),
                              get_float(values, "road.max_radius", 4000.0))
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError("road", str(exc)) from None
    raise ConfigError("road.kind", f"unknown road kind {kind!r} (straight, arc, mixed)")


def parse_scenario(values: Dict[str, str], extra_keys: Iterable[str] = ()) -> Tuple[ScenarioConfig, TrackerConfig]:
    """Scenario and tracker settings from a key-value mapping."""
    check_keys(values, set(SCENARIO_KEYS) | set(TRACKER_KEYS) | set(extra_keys))
    road = _build_road(values)
    duration = get_float(values, "duration", 0.0)
    try:
        scenario = ScenarioConfig(
            road=road,
            ego_speed=get_float(values, "ego.speed", 30.0),
            lead_gap=get_float(values, "lead.gap", 40.0),
            lead_speed=get_float(values, "lead.speed", 28.0),
            ego_station=get_float(values, "ego.station", 0.0),
            ego_offset=get_float(values, "ego.offset", 0.0),
            seed=get_int(values, "seed", 0),
            duration=duration if duration > 0 else None,
            track=get_float(values, "vehicle.track", 1.8),
            wheelbase=get_float(values, "vehicle.wheelbase", 2.7),
            lead_speed_noise=get_float(values, "lead.speed_noise", 0.0),
            name=get_str(values, "name", "scenario"),
        )
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError("scenario", str(exc)) from None
    return scenario, TrackerConfig.from_mapping(values)


def load_scenario(path: Union[str, Path], extra_keys: Iterable[str] = ()) -> Tuple[ScenarioConfig, TrackerConfig]:
    """Read a scenario file in the key-value format."""
    return parse_scenario(load_kv_file(path), extra_keys)


@dataclass(frozen=True)
class SimState:
    """World state: ego rear-axle pose and speed, lead station and speed."""

    x: float
    y: float
    heading: float
    v: float
    lead_s: float
    lead_v: float
    t: float = 0.0
    station: float = 0.0
    lead_offset: float = 0.0
    clamp_events: int = 0


def initial_state(scenario: ScenarioConfig) -> SimState:
    road = scenario.road
    pos = road.lateral_point(scenario.ego_station, scenario.ego_offset)
    return SimState(
        x=float(pos[0]), y=float(pos[1]),
        heading=road.heading(scenario.ego_station),
        v=scenario.ego_speed,
        lead_s=scenario.ego_station + scenario.lead_gap,
        lead_v=scenario.lead_speed_at(0.0),
        station=scenario.ego_station,
    )


def step_vehicle(state: SimState, steer: float, accel: float, dt: float = SIM_DT,
                 wheelbase: float = 2.7) -> SimState:
    """
    Kinematic bicycle update (rear axle reference), forward Euler in 10 ms substeps.

    Steering and acceleration are clamped to the actuator limits; each clamped
    call adds one to ``clamp_events``.
    """
    if not (0.0 < dt <= 0.05):
        raise ValueError(f"dt must be in (0, 0.05], got {dt}")
    clamped = 0
    if abs(steer) > MAX_STEER:
        steer = float(np.clip(steer, -MAX_STEER, MAX_STEER))
        clamped = 1
    if accel < ACCEL_MIN or accel > ACCEL_MAX:
        accel = float(np.clip(accel, ACCEL_MIN, ACCEL_MAX))
        clamped = 1
    n_sub = max(int(np.ceil(dt / SIM_DT - 1e-9)), 1)
    h = dt / n_sub
    x, y, th, v = state.x, state.y, state.heading, state.v
    yaw_gain = np.tan(steer) / wheelbase
    for _ in range(n_sub):
        x, y, th, v = (x + v * np.cos(th) * h, y + v * np.sin(th) * h,
                       th + v * yaw_gain * h, max(v + accel * h, 0.0))
    return replace(state, x=float(x), y=float(y), heading=float(th), v=float(v),
                   t=state.t + dt, clamp_events=state.clamp_events + clamped)


# ---------------------------------------------------------------------------
# Virtual sensors and monitor
# ---------------------------------------------------------------------------

def to_ego_frame(state: SimState, points: np.ndarray) -> np.ndarray:
    c, s = np.cos(state.heading), np.sin(state.heading)
    d = np.atleast_2d(points) - np.array([state.x, state.y])
    return np.column_stack([c * d[:, 0] + s * d[:, 1], -s * d[:, 0] + c * d[:, 1]])


def lane_polynomials(state: SimState, road: RoadGeometry, order: int = 2, lane_offset: float = 0.0,
                     lookahead: float = SENSOR_RANGE, step: float = SENSOR_STEP) -> Tuple[np.ndarray, np.ndarray]:
    """Left/right boundary polynomial coefficients (c0, c1, ...) in the ego frame."""
    stations = state.station + np.arange(0.0, lookahead + 1e-9, step)
    coeffs = []
    for side in (1.0, -1.0):
        boundary = road.lateral_points(stations, lane_offset + side * road.lane_width / 2.0)
        local = to_ego_frame(state, boundary)
        coeffs.append(np.polynomial.polynomial.polyfit(local[:, 0], local[:, 1], order))
    return coeffs[0], coeffs[1]


def lead_in_ego_frame(state: SimState, road: RoadGeometry) -> np.ndarray:
    return to_ego_frame(state, road.lateral_point(state.lead_s, state.lead_offset))[0]


def sense(state: SimState, road: RoadGeometry, lookahead: float = SENSOR_RANGE,
          lane_offset: float = 0.0) -> FeatureVector:
    """Perfect virtual lane camera (quadratic fits) and radar (gap along ego x, exact lead speed)."""
    if state.station < -1e-6 or state.station > road.stations[-1]:
        raise ValueError(f"ego station {state.station:.1f} m is outside the road extent")
    left, right = lane_polynomials(state, road, 2, lane_offset, lookahead)
    lead = lead_in_ego_frame(state, road)
    return FeatureVector(
        c0l=float(left[0]), c1l=float(left[1]), c2l=float(left[2]),
        c0r=float(right[0]), c1r=float(right[1]), c2r=float(right[2]),
        v_x=state.v, v_lead=state.lead_v, d_lead=float(lead[0]),
    )


def monitor(state: SimState, road: RoadGeometry, track: float, lane_offset: float = 0.0) -> Optional[str]:
    """First violated safety constraint: ``'lane'``, ``'collision'`` or None."""
    _, offset = road.project((state.x, state.y), hint=state.station)
    if abs(offset - lane_offset) + track / 2.0 > road.lane_width / 2.0:
        return "lane"
    gap = lead_in_ego_frame(state, road)[0]
    closing = state.v - state.lead_v
    if closing > 0.0:
        if gap <= 0.0 or gap / closing <= 1.0:
            return "collision"
    return None


# ---------------------------------------------------------------------------
# Policies
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class NetworkPolicy:
    """Trained network as a closed-loop policy."""

    net: PolicyNetwork

    def __call__(self, features: FeatureVector, t: float) -> np.ndarray:
        return forward(self.net, features)


@dataclass(frozen=True)
class LaneCenterPolicy:
    """Oracle: follow the lane center at the current speed."""

    horizon_s: float = 20.0
    kv: KnotVector = DEFAULT_KNOTS

    def __call__(self, features: FeatureVector, t: float) -> np.ndarray:
        times = np.arange(1.0, self.horizon_s + 1e-9, 1.0)
        xs = features.v_x * times
        center = 0.5 * ((features.c0l + features.c0r) + (features.c1l + features.c1r) * xs
                        + (features.c2l + features.c2r) * xs ** 2)
        return fit_spline(np.column_stack([times, xs, center]), self.horizon_s, self.kv).coefficients()


@dataclass(frozen=True, eq=False)
class ExpertReplayPolicy:
    """Replays recorded expert plans, one per replanning instant."""

    targets: Tuple[np.ndarray, ...]
    replan_s: float = 1.0

    def __call__(self, features: FeatureVector, t: float) -> np.ndarray:
        k = min(int(round(t / self.replan_s)), len(self.targets) - 1)
        return np.asarray(self.targets[k], dtype=float)


# ---------------------------------------------------------------------------
# Closed loop
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class EvalReport:
    """Outcome of one closed-loop run."""

    name: str
    completion: float
    flag: str
    flag_time: Optional[float]
    trace: pd.DataFrame = field(repr=False)
    diagnostics: List[str] = field(default_factory=list)
    clamp_events: int = 0


def _plan_frame(pose: Tuple[float, float, float], xy: Sequence[float]) -> np.ndarray:
    x0, y0, th = pose
    dx, dy = xy[0] - x0, xy[1] - y0
    return np.array([np.cos(th) * dx + np.sin(th) * dy, -np.sin(th) * dx + np.cos(th) * dy])


def _plan_to_ego(pose: Tuple[float, float, float], state: SimState, point: np.ndarray) -> np.ndarray:
    x0, y0, th = pose
    gx = x0 + np.cos(th) * point[0] - np.sin(th) * point[1]
    gy = y0 + np.sin(th) * point[0] + np.cos(th) * point[1]
    return to_ego_frame(state, np.array([gx, gy]))[0]


def _trace_row(t: float, state: SimState, road: RoadGeometry, flag: Optional[str]) -> tuple:
    gap = lead_in_ego_frame(state, road)[0]
    _, offset = road.project((state.x, state.y), hint=state.station)
    return (round(t, 6), state.x, state.y, state.heading, state.v, offset, gap,
            state.lead_v, flag or FLAG_NONE, state.station)


def run_closed_loop(
    scenario: ScenarioConfig,
    policy: Policy,
    tracker_cfg: TrackerConfig = TrackerConfig(),
    horizon_s: float = 20.0,
    kv: KnotVector = DEFAULT_KNOTS,
    replan_s: float = 1.0,
    trace_every_s: float = 0.1,
    stop_on_flag: bool = True,
    max_time: float = MAX_RUN_TIME,
) -> EvalReport:
    """
    Run a policy in closed loop: replan every ``replan_s``, control and integrate at 100 Hz.

    The run ends at the first safety flag (unless ``stop_on_flag`` is False),
    at the road end, or when ``scenario.duration`` elapses. Completion is 1
    without a flag; otherwise the fraction of the course (or of the duration,
    for timed scenarios) covered when the flag was raised.

    Args:
        scenario: Road, initial conditions, lead speed law
        policy: Callable (features, sim time) -> six spline coefficients
        tracker_cfg: PID and Pure Pursuit settings
        horizon_s: Plan horizon
        kv: Plan knot vector
        replan_s: Replanning period
        trace_every_s: Trace sampling period
        stop_on_flag: Stop at the first flag
        max_time: Time cap for untimed scenarios

    Returns:
        EvalReport
    """
    road = scenario.road
    dt = SIM_DT
    replan_every = max(int(round(replan_s / dt)), 1)
    trace_every = max(int(round(trace_every_s / dt)), 1)
    timed = scenario.duration is not None
    n_steps = int(round((scenario.duration if timed else max_time) / dt))
    course = max(road.length - scenario.ego_station, 1e-9)

    state = initial_state(scenario)
    pid = PIDState()
    steer = 0.0
    spline: Optional[BSpline2D] = None
    reference: Optional[PlanReference] = None
    plan_pose = (state.x, state.y, state.heading)
    t_plan = 0.0
    diagnostics: List[str] = []
    rows = []
    first_flag: Optional[str] = None
    flag_time: Optional[float] = None
    flag_station = state.station
    target_behind = False
    ran_out = False

    for k in range(n_steps + 1):
        t = k * dt
        current_flag = monitor(state, road, scenario.track)
        if current_flag and first_flag is None:
            first_flag, flag_time, flag_station = current_flag, state.t, state.station
        stopping = first_flag is not None and stop_on_flag
        if (k % trace_every == 0 and k < n_steps) or (stopping and current_flag):
            rows.append(_trace_row(t, state, road, current_flag))
        if stopping or state.station >= road.length:
            break
        if k == n_steps:
            ran_out = True
            break

        if k % replan_every == 0:
            try:
                features = sense(state, road)
            except ValueError as exc:
                diagnostics.append(f"t={t:.2f}s {exc}")
                if first_flag is None:
                    first_flag, flag_time, flag_station = "lane", t, state.station
                break
            coeffs = np.asarray(policy(features, t), dtype=float)
            if coeffs.shape != (2 * (kv.n_coeffs - 1),) or not np.all(np.isfinite(coeffs)):
                diagnostics.append(f"t={t:.2f}s non-finite or malformed policy output, aborting")
                if first_flag is None:
                    first_flag, flag_time, flag_station = "abort", t, state.station
                break
            spline = BSpline2D.from_coefficients(coeffs, horizon_s, kv)
            reference = PlanReference.build(spline)
            plan_pose = (state.x, state.y, state.heading)
            t_plan = t
            target_behind = False

        ego_in_plan = _plan_frame(plan_pose, (state.x, state.y))
        t_since = min(t - t_plan, horizon_s * (1.0 - 1e-9))
        target_plan, v_target = reference_from_spline(
            spline, t_since, tracker_cfg.lookahead(state.v), ego_in_plan, reference)
        target_ego = _plan_to_ego(plan_pose, state, target_plan)
        if target_ego[0] <= 0.0 and not target_behind:
            # once per plan
            diagnostics.append(f"t={t:.2f}s pure pursuit target behind the vehicle, steering held")
            target_behind = True
        steer = pure_pursuit(target_ego, tracker_cfg, steer)
        accel, pid = pid_accel(v_target, state.v, pid, dt, tracker_cfg)

        state = step_vehicle(state, steer, accel, dt, tracker_cfg.wheelbase)
        lead_v = scenario.lead_speed_at(state.t)
        station, _ = road.project((state.x, state.y), hint=state.station)
        state = replace(state, lead_s=state.lead_s + state.lead_v * dt, lead_v=lead_v, station=station)

    if ran_out and not timed:
        first_flag = first_flag or "timeout"
        flag_time = flag_time if flag_time is not None else state.t
        flag_station = state.station if first_flag == "timeout" else flag_station

    if first_flag is None:
        completion = 1.0
    else:
        if timed:
            progress = (flag_time or 0.0) / scenario.duration
        else:
            progress = (flag_station - scenario.ego_station) / course
        completion = float(min(max(progress, 0.0), np.nextafter(1.0, 0.0)))
    if state.clamp_events:
        diagnostics.append(f"{state.clamp_events} actuator clamp events")

    trace = pd.DataFrame(rows, columns=TRACE_COLUMNS + ["station"])
    return EvalReport(
        name=scenario.name,
        completion=completion,
        flag=first_flag or FLAG_NONE,
        flag_time=flag_time,
        trace=trace,
        diagnostics=diagnostics,
        clamp_events=state.clamp_events,
    )


def _run_job(job: Tuple[ScenarioConfig, Policy], tracker_cfg: TrackerConfig) -> EvalReport:
    scenario, policy = job
    return run_closed_loop(scenario, policy, tracker_cfg)


def run_many(jobs: Sequence[Tuple[ScenarioConfig, Policy]], tracker_cfg: TrackerConfig = TrackerConfig(),
             workers: int = 1, verbose: bool = False) -> List[EvalReport]:
    """Run independent scenarios, optionally in worker processes; results keep job order."""
    runner = partial(_run_job, tracker_cfg=tracker_cfg)
    if workers > 1:
        return process_map(runner, jobs, max_workers=workers, chunksize=1, disable=not verbose)
    return [runner(job) for job in tqdm(jobs, desc="Scenarios", disable=not verbose)]


def trace_frame(report: EvalReport) -> pd.DataFrame:
    """Trace in the published column order."""
    return report.trace[TRACE_COLUMNS]


# ---------------------------------------------------------------------------
# Held-out replay
# ---------------------------------------------------------------------------

def estimate_headings(xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Path tangent headings by central differences (one-sided at the ends)."""
    return np.arctan2(np.gradient(np.asarray(ys, dtype=float)), np.gradient(np.asarray(xs, dtype=float)))


@dataclass(eq=False)
class ReplayResult:
    """Time-aligned expert and closed-loop traces of a held-out maneuver."""

    paired: pd.DataFrame
    report: EvalReport
    scenario: ScenarioConfig


def reconstruct_scenario(records: Sequence, track: float = 1.8, wheelbase: float = 2.7,
                         rate_hz: float = 5.0) -> Tuple[ScenarioConfig, np.ndarray, np.ndarray]:
    """
    Rebuild road, lead speed profile and initial state from recorded log rows.

    Returns:
        (scenario, expert stations, expert lateral offsets)
    """
    from datapipe import lead_kinematics

    if len(records) < 4:
        raise ValueError("held maneuver is too short to reconstruct")
    times = np.array([r.t for r in records])
    if np.any(np.diff(times) > 1.5 / rate_hz) or np.any(np.diff(times) <= 0):
        raise ValueError("held maneuver has gaps in its records")
    if any(r.lead is None for r in records):
        raise ValueError("held maneuver has records without a lead vehicle")

    xs = np.array([r.X for r in records])
    ys = np.array([r.Y for r in records])
    headings = estimate_headings(xs, ys)
    center_offset = np.array([(r.lane_l[0] + r.lane_r[0]) / 2.0 for r in records])
    lane_width = float(np.mean([r.lane_l[0] - r.lane_r[0] for r in records]))
    normals = np.column_stack([-np.sin(headings), np.cos(headings)])
    centers = np.column_stack([xs, ys]) + center_offset[:, None] * normals

    # extend with the last record's lane-center polynomial
    last = records[-1]
    ahead = np.arange(SENSOR_STEP, SENSOR_RANGE * 2 + 1e-9, SENSOR_STEP)
    poly = 0.5 * (np.asarray(last.lane_l) + np.asarray(last.lane_r))
    local = np.column_stack([ahead, np.polynomial.polynomial.polyval(ahead, poly)])
    c, s = np.cos(headings[-1]), np.sin(headings[-1])
    ext = np.column_stack([xs[-1] + c * local[:, 0] - s * local[:, 1], ys[-1] + s * local[:, 0] + c * local[:, 1]])
    road = RoadGeometry.from_centerline(np.vstack([centers, ext]), lane_width)

    stations, offsets = [], []
    hint = None
    for x, y in zip(xs, ys):
        station, offset = road.project((x, y), hint=hint)
        stations.append(station)
        offsets.append(offset)
        hint = station
    kin = lead_kinematics(records)
    profile = tuple((float(t - times[0]), float(k.v_lead)) for t, k in zip(times, kin))
    scenario = ScenarioConfig(
        road=road,
        ego_speed=float(records[0].vx),
        lead_gap=float(kin[0].d_lead),
        lead_profile=profile,
        ego_station=stations[0],
        ego_offset=offsets[0],
        duration=len(records) / rate_hz,
        track=track,
        wheelbase=wheelbase,
        name="heldout",
    )
    return scenario, np.array(stations), np.array(offsets)


def replay_heldout(held, policy: Policy, tracker_cfg: TrackerConfig = TrackerConfig(),
                   track: float = 1.8, horizon_s: float = 20.0, kv: KnotVector = DEFAULT_KNOTS,
                   rate_hz: float = 5.0) -> ReplayResult:
    """
    Replay a held-out maneuver in closed loop and pair the result with the recording.

    Args:
        held: Maneuver (its ``records`` are log rows)
        policy: Closed-loop policy
        tracker_cfg: Tracker settings
        track: Vehicle track for the lane monitor
        horizon_s: Plan horizon
        kv: Plan knot vector
        rate_hz: Log rate; the paired trace is sampled at this rate

    Returns:
        ReplayResult with columns t, expert_x, expert_vx, expert_offset,
        policy_x, policy_vx, policy_offset, policy_flag
    """
    records = list(held.records)
    scenario, stations, offsets = reconstruct_scenario(records, track, tracker_cfg.wheelbase, rate_hz)
    report = run_closed_loop(scenario, policy, tracker_cfg, horizon_s, kv,
                             trace_every_s=1.0 / rate_hz, stop_on_flag=False)
    trace = report.trace
    n = min(len(records), len(trace))
    t0 = records[0].t
    paired = pd.DataFrame({
        "t": [round(r.t - t0, 6) for r in records[:n]],
        "expert_x": stations[:n] - stations[0],
        "expert_vx": [r.vx for r in records[:n]],
        "expert_offset": offsets[:n],
        "policy_x": trace["station"].to_numpy()[:n] - scenario.ego_station,
        "policy_vx": trace["vx"].to_numpy()[:n],
        "policy_offset": trace["offset"].to_numpy()[:n],
        "policy_flag": trace["flag"].to_numpy()[:n],
    })
    return ReplayResult(paired=paired, report=report, scenario=scenario)


def expert_plans(tuples: Sequence, start_t: float, duration_s: float, replan_s: float = 1.0) -> Tuple[np.ndarray, ...]:
    """Recorded expert targets at each replanning instant of a replay window."""
    by_time = {round(tp.t_anchor, 3): tp.target for tp in tuples}
    plans = []
    for k in range(int(np.ceil(duration_s / replan_s))):
        key = round(start_t + k * replan_s, 3)
        if key not in by_time:
            raise ValueError(f"no expert tuple anchored at t={key}")
        plans.append(by_time[key])
    return tuple(plans)


__all__ = [
    "RoadGeometry", "ScenarioConfig", "SimState", "EvalReport", "ReplayResult",
    "straight_road", "arc_road", "mixed_road", "parse_scenario", "load_scenario",
    "initial_state", "step_vehicle", "sense", "monitor", "lane_polynomials",
    "run_closed_loop", "run_many", "replay_heldout", "reconstruct_scenario",
    "NetworkPolicy", "LaneCenterPolicy", "ExpertReplayPolicy", "expert_plans",
    "estimate_headings", "trace_frame",
]
