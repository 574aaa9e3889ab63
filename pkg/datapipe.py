"""
Expert driving logs and the processing pipeline that turns them into experience tuples.

Logs follow the recorded-vehicle format: 5 Hz rows of ego position and speed,
cubic lane-boundary fits in the ego frame and the radar lead position.
The synthetic expert is a lane-centering Pure Pursuit driver with an
Intelligent Driver Model spacing law.
"""
from dataclasses import dataclass, field, replace
from functools import partial
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from tqdm import tqdm
from tqdm.contrib.concurrent import process_map

from config import ConfigError, check_keys, get_float, load_kv_file
from policy_net import FEATURE_NAMES, FeatureVector
from simcore import (
    SIM_DT,
    ScenarioConfig,
    estimate_headings,
    initial_state,
    lane_polynomials,
    lead_in_ego_frame,
    parse_scenario,
    step_vehicle,
    to_ego_frame,
)
from splines import DEFAULT_KNOTS, KnotVector, fit_spline
from tracker import TrackerConfig, pure_pursuit
from utils.fileio import read_csv, write_csv

LOG_RATE_HZ = 5.0
FUTURE_RATE_HZ = 1.0
RADAR_RANGE = 150.0
VEHICLE_LENGTH = 4.5

LANE_JUMP_M = 1.5
LANE_CHANGE_WINDOW_S = 5.0
LANE_CHANGE_DURATION_S = 3.0
CUTIN_ACCEL = 8.0
CUTIN_WINDOW_S = 3.0
CUTIN_GAP_FACTOR = 0.4
CUTIN_MIN_GAP = 8.0
MIN_MANEUVER_S = 30.0
RADAR_DROPOUT_S = 1.0
NOISE_ORDER = 2
REFIT_RANGE = 60.0
REFIT_STEP = 5.0

LOG_COLUMNS = ["t", "X", "Y", "vx", "c0l", "c1l", "c2l", "c3l", "c0r", "c1r", "c2r", "c3r",
               "lead_x", "lead_y", "lead_valid"]
TARGET_COLUMNS = ["a1x", "a1y", "a2x", "a2y", "a3x", "a3y"]
EVENT_COLUMNS = ["t", "kind"]

EXPERT_KEYS = {
    "expert.desired_speed": "desired_speed",
    "expert.time_gap": "time_gap",
    "expert.max_accel": "max_accel",
    "expert.comfort_decel": "comfort_decel",
    "expert.min_gap": "min_gap",
    "expert.speed_noise": "speed_noise",
    "expert.noise_cutoff_hz": "noise_cutoff_hz",
    "expert.lane_wander": "lane_wander",
}


def future_columns(n_points: int = 20) -> List[str]:
    return [f"{axis}{j}" for j in range(1, n_points + 1) for axis in ("x", "y")]


# ---------------------------------------------------------------------------
# Types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LogRecord:
    """One 5 Hz log row; lane fits are cubic (c0, c1, c2, c3), y = c0 + c1 x + c2 x^2 + c3 x^3."""

    t: float
    X: float
    Y: float
    vx: float
    lane_l: Tuple[float, float, float, float]
    lane_r: Tuple[float, float, float, float]
    lead: Optional[Tuple[float, float]] = None


@dataclass(frozen=True)
class Injection:
    """Ground-truth label of an injected event."""

    t: float
    kind: str


@dataclass(eq=False)
class ExpertLog:
    records: List[LogRecord]
    injections: List[Injection] = field(default_factory=list)


@dataclass(frozen=True, eq=False)
class Maneuver:
    """Contiguous car-following segment with a lead present throughout."""

    id: int
    records: Tuple[LogRecord, ...]
    source: str = ""
    rate_hz: float = LOG_RATE_HZ

    @property
    def duration(self) -> float:
        return len(self.records) / self.rate_hz

    @property
    def start_t(self) -> float:
        return self.records[0].t

    def window(self, start_s: float, duration_s: float) -> "Maneuver":
        """Sub-maneuver starting ``start_s`` after the maneuver start."""
        first = int(round(start_s * self.rate_hz))
        count = int(round(duration_s * self.rate_hz))
        if first < 0 or count < 1 or first + count > len(self.records):
            raise ValueError(
                f"window [{start_s}, {start_s + duration_s}] s exceeds maneuver {self.id} ({self.duration:.1f} s)"
            )
        return replace(self, records=self.records[first:first + count])


@dataclass(frozen=True, eq=False)
class ExperienceTuple:
    """(current state, expert future) pair with the fitted expert spline."""

    features: FeatureVector
    target: np.ndarray
    future: np.ndarray
    maneuver_id: int = 0
    t_anchor: float = 0.0


@dataclass(frozen=True)
class LeadKinematics:
    d_lead: float
    v_lead: float
    valid: bool = True
    copied: bool = False


@dataclass(frozen=True)
class ExpertConfig:
    """IDM spacing law, seeded desired-speed noise and lateral wander of the synthetic expert."""

    desired_speed: float = 30.0
    time_gap: float = 1.5
    max_accel: float = 1.5
    comfort_decel: float = 2.0
    min_gap: float = 2.0
    delta: float = 4.0
    speed_noise: float = 0.3
    noise_cutoff_hz: float = 0.02
    lane_wander: float = 0.0

    def __post_init__(self):
        for name in ("desired_speed", "time_gap", "max_accel", "comfort_decel", "noise_cutoff_hz"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.min_gap < 0 or self.speed_noise < 0 or self.lane_wander < 0:
            raise ValueError("min_gap, speed_noise and lane_wander must be non-negative")

    @classmethod
    def from_mapping(cls, values: Dict[str, str]) -> "ExpertConfig":
        check_keys(values, EXPERT_KEYS, prefix="expert.")
        defaults = cls()
        kwargs = {attr: get_float(values, key, getattr(defaults, attr)) for key, attr in EXPERT_KEYS.items()}
        try:
            return cls(**kwargs)
        except ValueError as exc:
            raise ConfigError("expert", str(exc)) from None


def load_expert_scenario(path: Union[str, Path]) -> Tuple[ScenarioConfig, TrackerConfig, ExpertConfig]:
    """Scenario file for log generation: scenario and tracker keys plus ``expert.*``."""
    values = load_kv_file(path)
    scenario, tracker_cfg = parse_scenario(values, EXPERT_KEYS)
    return scenario, tracker_cfg, ExpertConfig.from_mapping(values)


# ---------------------------------------------------------------------------
# Synthetic expert
# ---------------------------------------------------------------------------

def idm_accel(v: float, v_lead: Optional[float], gap: Optional[float], v0: float, cfg: ExpertConfig) -> float:
    """Intelligent Driver Model acceleration; no lead means free-road driving."""
    free = 1.0 - (v / max(v0, 0.1)) ** cfg.delta
    if v_lead is None or gap is None:
        return cfg.max_accel * free
    s_star = cfg.min_gap + max(0.0, v * cfg.time_gap + v * (v - v_lead) / (2.0 * np.sqrt(cfg.max_accel * cfg.comfort_decel)))
    net_gap = max(gap - VEHICLE_LENGTH, 0.1)
    return cfg.max_accel * (free - (s_star / net_gap) ** 2)


class LowPassNoise:
    """
    Gaussian noise through ``order`` cascaded first-order low-pass stages (1 or 2).

    The drive is scaled so the output has stationary standard deviation ``std``.
    """

    def __init__(self, rng: np.random.Generator, std: float, cutoff_hz: float, dt: float, order: int = 1):
        if order not in (1, 2):
            raise ValueError(f"order must be 1 or 2, got {order}")
        self.rng = rng
        self.alpha = dt / (dt + 1.0 / (2.0 * np.pi * cutoff_hz))
        r2 = (1.0 - self.alpha) ** 2
        if order == 1:
            gain = self.alpha ** 2 / (1.0 - r2)
        else:
            gain = self.alpha ** 4 * (1.0 + r2) / (1.0 - r2) ** 3
        self.drive = std / np.sqrt(gain)
        self.stages = np.zeros(order)

    @property
    def value(self) -> float:
        return float(self.stages[-1])

    def step(self) -> float:
        u = self.drive * self.rng.standard_normal()
        for i in range(len(self.stages)):
            self.stages[i] += self.alpha * (u - self.stages[i])
            u = self.stages[i]
        return float(u)


def _smoothstep(u: float) -> float:
    u = min(max(u, 0.0), 1.0)
    return u * u * (3.0 - 2.0 * u)


def _lane_target(t: float, lane_changes: Sequence[Tuple[float, float]], lane_width: float) -> float:
    offset = 0.0
    half = LANE_CHANGE_DURATION_S / 2.0
    for t_c, direction in lane_changes:
        offset += direction * lane_width * _smoothstep((t - (t_c - half)) / LANE_CHANGE_DURATION_S)
    return offset


def generate_expert_log(
    scenario: ScenarioConfig,
    duration_s: float,
    seed: int,
    expert_cfg: ExpertConfig = ExpertConfig(),
    tracker_cfg: TrackerConfig = TrackerConfig(),
    cutin_times: Sequence[float] = (),
    lane_change_times: Sequence[float] = (),
    dropout_times: Sequence[float] = (),
    rate_hz: float = LOG_RATE_HZ,
    verbose: bool = False,
) -> ExpertLog:
    """
    Drive the synthetic expert through a scenario and record a 5 Hz log.

    Speed preference, lead speed and lateral wander noises are second-order
    low-pass processes at ``expert_cfg.noise_cutoff_hz``. A radar dropout
    hides the lead from the log for ``RADAR_DROPOUT_S`` while the expert
    keeps following it, which splits the log into separate maneuvers.

    Args:
        scenario: Road and initial conditions; ``lead_speed_noise`` adds lead speed variation
        duration_s: Log duration
        seed: Seed of the expert and lead noises
        expert_cfg: IDM and noise settings
        tracker_cfg: Lookahead law and wheelbase of the steering controller
        cutin_times: Times of injected cut-ins (lead gap drops in one step)
        lane_change_times: Times of injected lane changes, alternating left/right
        dropout_times: Start times of radar dropouts
        rate_hz: Log rate
        verbose: Show a progress bar

    Returns:
        ExpertLog with records and ground-truth injection labels
    """
    if duration_s <= 0:
        raise ValueError("duration must be positive")
    road = scenario.road
    rng = np.random.default_rng(seed)
    noise = partial(LowPassNoise, rng, cutoff_hz=expert_cfg.noise_cutoff_hz, dt=SIM_DT, order=NOISE_ORDER)
    ego_noise = noise(expert_cfg.speed_noise)
    lead_noise = noise(scenario.lead_speed_noise)
    wander = noise(expert_cfg.lane_wander)

    changes = [(t, 1.0 if i % 2 == 0 else -1.0) for i, t in enumerate(sorted(lane_change_times))]
    pending_cutins = sorted(cutin_times)
    dropouts = sorted(dropout_times)
    injections = [Injection(round(t, 6), "lane_change") for t, _ in changes]
    injections += [Injection(round(t, 6), "dropout") for t in dropouts]

    n_steps = int(round(duration_s / SIM_DT))
    log_every = int(round(1.0 / (rate_hz * SIM_DT)))
    state = initial_state(scenario)
    steer = 0.0
    records: List[LogRecord] = []

    for k in tqdm(range(n_steps), desc="Expert drive", disable=not verbose):
        t = k * SIM_DT
        lane_offset = scenario.ego_offset + _lane_target(t, changes, road.lane_width)
        target_offset = lane_offset + wander.step()
        state = replace(state, lead_offset=lane_offset)
        if pending_cutins and t >= pending_cutins[0] - 1e-9:
            pending_cutins.pop(0)
            gap = state.lead_s - state.station
            state = replace(state, lead_s=state.station + max(CUTIN_GAP_FACTOR * gap, CUTIN_MIN_GAP))
            injections.append(Injection(round(t, 6), "cutin"))

        lead_local = lead_in_ego_frame(state, road)
        lead_seen = 0.0 < lead_local[0] <= RADAR_RANGE
        if k % log_every == 0:
            _, offset = road.project((state.x, state.y), hint=state.station)
            lane_center = round(offset / road.lane_width) * road.lane_width
            left, right = lane_polynomials(state, road, order=3, lane_offset=lane_center)
            dropped = any(t_d - 1e-9 <= t < t_d + RADAR_DROPOUT_S - 1e-9 for t_d in dropouts)
            records.append(LogRecord(
                t=round(t, 6), X=state.x, Y=state.y, vx=state.v,
                lane_l=tuple(float(c) for c in left), lane_r=tuple(float(c) for c in right),
                lead=(float(lead_local[0]), float(lead_local[1])) if lead_seen and not dropped else None,
            ))

        lookahead = tracker_cfg.lookahead(state.v)
        aim = road.lateral_point(state.station + lookahead, target_offset)
        steer = pure_pursuit(to_ego_frame(state, aim)[0], tracker_cfg, steer)
        v0 = max(expert_cfg.desired_speed + ego_noise.step(), 0.0)
        if lead_seen:
            accel = idm_accel(state.v, state.lead_v, float(lead_local[0]), v0, expert_cfg)
        else:
            accel = idm_accel(state.v, None, None, v0, expert_cfg)

        state = step_vehicle(state, steer, accel, SIM_DT, tracker_cfg.wheelbase)
        station, _ = road.project((state.x, state.y), hint=state.station)
        lead_v = max(scenario.lead_speed_at(state.t) + lead_noise.step(), 0.0)
        state = replace(state, station=station, lead_s=state.lead_s + state.lead_v * SIM_DT, lead_v=lead_v)
        if station >= road.stations[-1] - REFIT_RANGE:
            raise ValueError(f"road too short for a {duration_s:.0f} s log (ran out at t={t:.1f} s)")

    injections.sort(key=lambda e: (e.t, e.kind))
    return ExpertLog(records=records, injections=injections)


# ---------------------------------------------------------------------------
# Processing pipeline
# ---------------------------------------------------------------------------

def _merge_intervals(intervals: Sequence[Tuple[float, float]]) -> List[Tuple[float, float]]:
    merged: List[Tuple[float, float]] = []
    for lo, hi in sorted(intervals):
        if merged and lo <= merged[-1][1]:
            merged[-1] = (merged[-1][0], max(merged[-1][1], hi))
        else:
            merged.append((lo, hi))
    return merged


def _outside(records: Sequence[LogRecord], intervals: Sequence[Tuple[float, float]]) -> List[LogRecord]:
    return [r for r in records if not any(lo - 1e-9 <= r.t <= hi + 1e-9 for lo, hi in intervals)]


def _consecutive(a: LogRecord, b: LogRecord, rate_hz: float) -> bool:
    return 0.0 < b.t - a.t <= 1.5 / rate_hz


def remove_lane_changes(records: Sequence[LogRecord], jump_m: float = LANE_JUMP_M,
                        window_s: float = LANE_CHANGE_WINDOW_S) -> Tuple[List[LogRecord], List[Tuple[float, float]]]:
    """Drop ±``window_s`` around every lane re-anchoring (c0 jump > ``jump_m``)."""
    instants = [
        b.t for a, b in zip(records, records[1:])
        if abs(b.lane_l[0] - a.lane_l[0]) > jump_m or abs(b.lane_r[0] - a.lane_r[0]) > jump_m
    ]
    intervals = _merge_intervals([(t - window_s, t + window_s) for t in instants])
    return _outside(records, intervals), intervals


def lead_kinematics(records: Sequence[LogRecord], rate_hz: float = LOG_RATE_HZ) -> List[LeadKinematics]:
    """
    Lead gap and speed from the radar x-position.

    v_lead = v_x + (x(t) - x(t - dt)) / dt over consecutive records. The first
    record of a lead track copies the next estimate and is flagged ``copied``;
    a one-record track assumes zero relative speed.
    """
    n = len(records)
    raw: List[Optional[float]] = [None] * n
    for i in range(1, n):
        a, b = records[i - 1], records[i]
        if a.lead is not None and b.lead is not None and _consecutive(a, b, rate_hz):
            raw[i] = b.vx + (b.lead[0] - a.lead[0]) / (b.t - a.t)
    result = []
    for i, rec in enumerate(records):
        if rec.lead is None:
            result.append(LeadKinematics(float("nan"), float("nan"), valid=False))
        elif raw[i] is not None:
            result.append(LeadKinematics(rec.lead[0], raw[i]))
        elif i + 1 < n and raw[i + 1] is not None:
            result.append(LeadKinematics(rec.lead[0], raw[i + 1], copied=True))
        else:
            result.append(LeadKinematics(rec.lead[0], rec.vx, copied=True))
    return result


def implied_lead_accel(records: Sequence[LogRecord], kinematics: Sequence[LeadKinematics],
                       rate_hz: float = LOG_RATE_HZ) -> np.ndarray:
    """Lead acceleration between consecutive valid estimates; NaN where undefined."""
    accel = np.full(len(records), np.nan)
    for i in range(1, len(records)):
        a, b = kinematics[i - 1], kinematics[i]
        if a.valid and b.valid and _consecutive(records[i - 1], records[i], rate_hz):
            accel[i] = (b.v_lead - a.v_lead) / (records[i].t - records[i - 1].t)
    return accel


def filter_cutins(records: Sequence[LogRecord], kinematics: Sequence[LeadKinematics],
                  threshold: float = CUTIN_ACCEL, window_s: float = CUTIN_WINDOW_S,
                  rate_hz: float = LOG_RATE_HZ) -> Tuple[List[LogRecord], List[Tuple[float, float]]]:
    """Drop ±``window_s`` around unfeasible lead speed changes, and every record without a lead."""
    if len(kinematics) != len(records):
        raise ValueError("kinematics must have one entry per record")
    accel = implied_lead_accel(records, kinematics, rate_hz)
    instants = [records[i].t for i in np.flatnonzero(np.abs(np.nan_to_num(accel)) > threshold)]
    intervals = _merge_intervals([(t - window_s, t + window_s) for t in instants])
    kept = [r for r in _outside(records, intervals) if r.lead is not None]
    return kept, intervals


def segment_maneuvers(records: Sequence[LogRecord], min_duration_s: float = MIN_MANEUVER_S,
                      rate_hz: float = LOG_RATE_HZ, source: str = "") -> List[Maneuver]:
    """Maximal contiguous runs with a lead, at least ``min_duration_s`` long."""
    runs: List[List[LogRecord]] = []
    for rec in records:
        if rec.lead is None:
            if runs and runs[-1]:
                runs.append([])
            continue
        if runs and runs[-1] and _consecutive(runs[-1][-1], rec, rate_hz):
            runs[-1].append(rec)
        else:
            runs.append([rec])
    maneuvers = []
    for run in runs:
        if run and len(run) / rate_hz >= min_duration_s - 1e-9:
            maneuvers.append(Maneuver(len(maneuvers), tuple(run), source, rate_hz))
    return maneuvers


def quadratic_refit(cubic: Sequence[float], lookahead: float = REFIT_RANGE, step: float = REFIT_STEP) -> np.ndarray:
    """Second-order fit (c0, c1, c2) of a cubic lane polynomial sampled over the lookahead."""
    xs = np.arange(0.0, lookahead + 1e-9, step)
    ys = np.polynomial.polynomial.polyval(xs, np.asarray(cubic, dtype=float))
    return np.polynomial.polynomial.polyfit(xs, ys, 2)


def extract_tuples(m: Maneuver, horizon_s: float = 20.0, future_rate_hz: float = FUTURE_RATE_HZ,
                   kv: KnotVector = DEFAULT_KNOTS) -> List[ExperienceTuple]:
    """
    Experience tuples for every anchor with a full horizon of future.

    Futures are sampled at ``future_rate_hz`` (20 points over 20 s by
    default) and expressed in the anchor's ego frame.
    """
    step = int(round(m.rate_hz / future_rate_hz))
    n_future = int(round(horizon_s * future_rate_hz))
    n_anchor = len(m.records) - n_future * step
    if n_anchor <= 0:
        return []
    xs = np.array([r.X for r in m.records])
    ys = np.array([r.Y for r in m.records])
    headings = estimate_headings(xs, ys)
    kin = lead_kinematics(m.records, m.rate_hz)
    times = np.arange(1, n_future + 1) / future_rate_hz

    tuples = []
    for i in range(n_anchor):
        rec = m.records[i]
        if not kin[i].valid:
            continue
        idx = i + step * np.arange(1, n_future + 1)
        c, s = np.cos(headings[i]), np.sin(headings[i])
        dx, dy = xs[idx] - xs[i], ys[idx] - ys[i]
        future = np.column_stack([times, c * dx + s * dy, -s * dx + c * dy])
        left, right = quadratic_refit(rec.lane_l), quadratic_refit(rec.lane_r)
        features = FeatureVector(
            c0l=float(left[0]), c1l=float(left[1]), c2l=float(left[2]),
            c0r=float(right[0]), c1r=float(right[1]), c2r=float(right[2]),
            v_x=rec.vx, v_lead=kin[i].v_lead, d_lead=kin[i].d_lead,
        )
        target = fit_spline(future, horizon_s, kv).coefficients()
        tuples.append(ExperienceTuple(features, target, future, m.id, rec.t))
    return tuples


def extract_all(maneuvers: Sequence[Maneuver], horizon_s: float = 20.0, kv: KnotVector = DEFAULT_KNOTS,
                workers: int = 1, verbose: bool = False) -> List[ExperienceTuple]:
    """Tuples of several maneuvers, concatenated in maneuver order."""
    extract = partial(extract_tuples, horizon_s=horizon_s, kv=kv)
    if workers > 1 and len(maneuvers) > 1:
        parts = process_map(extract, maneuvers, max_workers=workers, chunksize=1, disable=not verbose)
    else:
        parts = [extract(m) for m in tqdm(maneuvers, desc="Maneuvers", disable=not verbose)]
    return [tp for part in parts for tp in part]


def leave_one_out_split(maneuvers: Sequence[Maneuver], held_id: int, horizon_s: float = 20.0,
                        kv: KnotVector = DEFAULT_KNOTS) -> Tuple[List[ExperienceTuple], Maneuver]:
    """Training tuples from every maneuver except ``held_id``, which is returned for replay."""
    held = [m for m in maneuvers if m.id == held_id]
    if not held:
        raise ValueError(f"unknown maneuver id {held_id}; available: {[m.id for m in maneuvers]}")
    train = extract_all([m for m in maneuvers if m.id != held_id], horizon_s, kv)
    return train, held[0]


@dataclass(eq=False)
class PipelineResult:
    """Maneuvers, tuples and what each filter removed."""

    maneuvers: List[Maneuver]
    tuples: List[ExperienceTuple]
    lane_change_intervals: List[Tuple[float, float]]
    cutin_intervals: List[Tuple[float, float]]
    n_input: int
    n_no_lead: int

    def summary(self) -> Dict[str, int]:
        return {
            "records_in": self.n_input,
            "lane_change_intervals": len(self.lane_change_intervals),
            "cutin_intervals": len(self.cutin_intervals),
            "records_without_lead": self.n_no_lead,
            "maneuvers": len(self.maneuvers),
            "tuples": len(self.tuples),
        }


def process_log(records: Sequence[LogRecord], horizon_s: float = 20.0, kv: KnotVector = DEFAULT_KNOTS,
                source: str = "", workers: int = 1, verbose: bool = False) -> PipelineResult:
    """Full pipeline: lane changes, lead kinematics, cut-ins, segmentation, tuple extraction."""
    if not records:
        raise ValueError("log has no records")
    times = np.array([r.t for r in records])
    if np.any(np.diff(times) <= 0):
        raise ValueError("log timestamps must be strictly increasing")
    kept, lane_intervals = remove_lane_changes(records)
    n_no_lead = sum(1 for r in kept if r.lead is None)
    kept, cutin_intervals = filter_cutins(kept, lead_kinematics(kept))
    maneuvers = segment_maneuvers(kept, source=source)
    tuples = extract_all(maneuvers, horizon_s, kv, workers, verbose)
    return PipelineResult(maneuvers, tuples, lane_intervals, cutin_intervals, len(records), n_no_lead)


# ---------------------------------------------------------------------------
# CSV formats
# ---------------------------------------------------------------------------

def log_to_frame(records: Sequence[LogRecord]) -> pd.DataFrame:
    rows = []
    for r in records:
        lead = r.lead if r.lead is not None else (0.0, 0.0)
        rows.append((r.t, r.X, r.Y, r.vx, *r.lane_l, *r.lane_r, lead[0], lead[1], int(r.lead is not None)))
    return pd.DataFrame(rows, columns=LOG_COLUMNS)


def frame_to_log(frame: pd.DataFrame) -> List[LogRecord]:
    records = []
    for row in frame.itertuples(index=False):
        records.append(LogRecord(
            t=float(row.t), X=float(row.X), Y=float(row.Y), vx=float(row.vx),
            lane_l=(float(row.c0l), float(row.c1l), float(row.c2l), float(row.c3l)),
            lane_r=(float(row.c0r), float(row.c1r), float(row.c2r), float(row.c3r)),
            lead=(float(row.lead_x), float(row.lead_y)) if int(row.lead_valid) else None,
        ))
    return records


def save_log(log: ExpertLog, path: Union[str, Path]) -> Path:
    """Write the log CSV; injection labels go to a sibling ``.events.csv``."""
    path = Path(path)
    write_csv(log_to_frame(log.records), path)
    events = pd.DataFrame([(e.t, e.kind) for e in log.injections], columns=EVENT_COLUMNS)
    write_csv(events, events_path(path))
    return path


def events_path(log_path: Union[str, Path]) -> Path:
    log_path = Path(log_path)
    return log_path.with_name(log_path.stem + ".events.csv")


def load_log(path: Union[str, Path]) -> List[LogRecord]:
    return frame_to_log(read_csv(path, LOG_COLUMNS))


def tuples_to_frame(tuples: Sequence[ExperienceTuple]) -> pd.DataFrame:
    columns = ["maneuver", "t_anchor"] + list(FEATURE_NAMES) + TARGET_COLUMNS + future_columns()
    rows = []
    for tp in tuples:
        rows.append([tp.maneuver_id, tp.t_anchor, *tp.features.as_array(), *tp.target,
                     *tp.future[:, 1:].reshape(-1)])
    return pd.DataFrame(rows, columns=columns)


def frame_to_tuples(frame: pd.DataFrame, horizon_s: float = 20.0) -> List[ExperienceTuple]:
    fut_cols = future_columns()
    n_future = len(fut_cols) // 2
    times = np.arange(1, n_future + 1) * (horizon_s / n_future)
    features = frame[list(FEATURE_NAMES)].to_numpy(dtype=float)
    targets = frame[TARGET_COLUMNS].to_numpy(dtype=float)
    futures = frame[fut_cols].to_numpy(dtype=float).reshape(-1, n_future, 2)
    maneuver = frame["maneuver"].to_numpy()
    anchors = frame["t_anchor"].to_numpy(dtype=float)
    return [
        ExperienceTuple(FeatureVector.from_array(features[i]), targets[i].copy(),
                        np.column_stack([times, futures[i]]), int(maneuver[i]), float(anchors[i]))
        for i in range(len(frame))
    ]


def save_tuples(tuples: Sequence[ExperienceTuple], path: Union[str, Path]) -> Path:
    return write_csv(tuples_to_frame(tuples), path)


def load_tuples(path: Union[str, Path], horizon_s: float = 20.0) -> List[ExperienceTuple]:
    columns = ["maneuver", "t_anchor"] + list(FEATURE_NAMES) + TARGET_COLUMNS + future_columns()
    return frame_to_tuples(read_csv(path, columns), horizon_s)
