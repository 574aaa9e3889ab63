"""Shared fixtures: steady and noisy expert logs, hand-built records and tiny datasets."""
from pathlib import Path

import numpy as np
import pytest

from datapipe import (
    ExpertConfig,
    LogRecord,
    VEHICLE_LENGTH,
    extract_all,
    extract_tuples,
    generate_expert_log,
    load_expert_scenario,
    process_log,
    segment_maneuvers,
)
from simcore import ScenarioConfig, straight_road

SPEED = 28.0
LEAD_GAP = 140.0
SCENARIO_DIR = Path(__file__).resolve().parent.parent / "scenarios"
HIGHWAY_LOG_S = 150.0


def steady_expert_config(speed: float = SPEED, gap: float = LEAD_GAP, noise: float = 0.0) -> ExpertConfig:
    """IDM settings whose equilibrium is exactly (speed, gap) behind a lead at the same speed."""
    base = ExpertConfig(time_gap=1.0, speed_noise=noise)
    s_star = base.min_gap + speed * base.time_gap
    free = 1.0 - (s_star / (gap - VEHICLE_LENGTH)) ** 2
    return ExpertConfig(desired_speed=speed / free ** 0.25, time_gap=1.0, speed_noise=noise)


def steady_scenario(length: float = 4000.0, lead_noise: float = 0.0) -> ScenarioConfig:
    return ScenarioConfig(road=straight_road(length), ego_speed=SPEED, lead_gap=LEAD_GAP,
                          lead_speed=SPEED, lead_speed_noise=lead_noise, name="steady")


def make_records(n: int, t0: float = 0.0, speed: float = 30.0, lead_x=50.0, rate_hz: float = 5.0):
    """Straight centered driving at constant speed; ``lead_x`` is a constant or a per-record list."""
    records = []
    for i in range(n):
        t = round(t0 + i / rate_hz, 6)
        gap = lead_x[i] if isinstance(lead_x, (list, tuple, np.ndarray)) else lead_x
        records.append(LogRecord(
            t=t, X=speed * t, Y=0.0, vx=speed,
            lane_l=(1.75, 0.0, 0.0, 0.0), lane_r=(-1.75, 0.0, 0.0, 0.0),
            lead=None if gap is None else (float(gap), 0.0),
        ))
    return records


@pytest.fixture(scope="session")
def steady_log():
    """60 s of steady car-following on a straight road."""
    return generate_expert_log(steady_scenario(), 60.0, seed=0, expert_cfg=steady_expert_config())


@pytest.fixture(scope="session")
def steady_maneuver(steady_log):
    maneuvers = segment_maneuvers(steady_log.records)
    assert len(maneuvers) == 1
    return maneuvers[0]


@pytest.fixture(scope="session")
def steady_tuples(steady_maneuver):
    return extract_tuples(steady_maneuver)


@pytest.fixture
def scenario_file(tmp_path):
    """Writer for key=value scenario files."""
    def write(text: str, name: str = "scenario.env"):
        path = tmp_path / name
        path.write_text(text)
        return path
    return write


@pytest.fixture(scope="session")
def highway_log():
    """150 s of noisy expert driving at 115 km/h with a radar dropout at 75 s."""
    scenario, tracker_cfg, expert_cfg = load_expert_scenario(SCENARIO_DIR / "highway115.env")
    return generate_expert_log(scenario, HIGHWAY_LOG_S, seed=scenario.seed, expert_cfg=expert_cfg,
                               tracker_cfg=tracker_cfg, dropout_times=[HIGHWAY_LOG_S / 2])


@pytest.fixture(scope="session")
def highway_maneuvers(highway_log):
    return process_log(highway_log.records, source="highway115").maneuvers


@pytest.fixture(scope="session")
def highway_tuples(highway_maneuvers):
    return extract_all(highway_maneuvers)
